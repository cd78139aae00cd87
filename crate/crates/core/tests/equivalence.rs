use pcfg::cfg::canonical_serialize;
use pcfg::engine::{construct, construct_with, EngineConfig, Schedule};
use pcfg::serial::{serial_construct, serial_construct_with, SerialOptions};
use pcfg::workload::{corpus, generate, Scenario};

fn canon(g: &pcfg::Cfg) -> String {
    canonical_serialize(g).unwrap()
}

#[test]
fn engine_matches_serial_on_corpus() {
    for (s, seed) in corpus(5) {
        let (image, _) = generate(&s, seed).unwrap();
        let want = canon(&serial_construct(&image).unwrap().cfg);
        for workers in [1, 2, 4, 8] {
            let run = construct(&image, workers).unwrap();
            assert_eq!(canon(&run.cfg), want, "{s} seed {seed} workers {workers}");
        }
    }
}

#[test]
fn schedules_and_cache_do_not_change_output() {
    let (image, _) = generate(&Scenario::BigRandom { functions: 1500 }, 11).unwrap();
    let want = canon(&serial_construct(&image).unwrap().cfg);
    for schedule in [Schedule::Tasks, Schedule::LevelSync] {
        for thread_cache in [true, false] {
            let cfg = EngineConfig { workers: 4, schedule, thread_cache };
            assert_eq!(canon(&construct_with(&image, cfg).unwrap().cfg), want, "{schedule:?} cache={thread_cache}");
        }
    }
}

#[test]
fn seed_order_does_not_change_serial_output() {
    for (s, seed) in corpus(2) {
        let (image, _) = generate(&s, seed).unwrap();
        let a = serial_construct(&image).unwrap();
        let b = serial_construct_with(&image, SerialOptions { reverse_seeds: true }).unwrap();
        assert_eq!(canon(&a.cfg), canon(&b.cfg), "{s}");
    }
}

#[test]
fn tables_agree_with_serial() {
    let (image, _) = generate(&Scenario::BigRandom { functions: 1000 }, 3).unwrap();
    let s = serial_construct(&image).unwrap();
    let p = construct(&image, 8).unwrap();
    assert_eq!(s.tables, p.tables);
    assert_eq!(canon(&s.traversed), canon(&p.traversed));
}
