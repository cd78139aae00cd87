use std::sync::atomic::{AtomicU64, Ordering};

macro_rules! counters {
    ($($(#[$m:meta])* $name:ident,)*) => {
        /// Live instrumentation shared by all workers.
        #[derive(Debug, Default)]
        pub struct Counters {
            $($(#[$m])* pub $name: AtomicU64,)*
        }

        /// A point-in-time copy of [`Counters`].
        #[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
        pub struct CounterSnapshot {
            $($(#[$m])* pub $name: u64,)*
        }

        impl Counters {
            pub fn snapshot(&self) -> CounterSnapshot {
                CounterSnapshot {
                    $($name: self.$name.load(Ordering::Relaxed),)*
                }
            }
        }
    };
}

counters! {
    /// Claims of a block start that succeeded.
    blocks_created,
    block_claims_lost,
    functions_created,
    function_claims_lost,
    /// Distinct block end addresses registered.
    ends_registered,
    /// Registrations that found the end already owned.
    end_registration_losses,
    splits,
    /// Terminator edge lists that changed owning block.
    edges_moved,
    split_max_depth,
    /// Recursive split steps whose end address failed to decrease.
    split_monotonic_violations,
    waiters_registered,
    waiters_outstanding,
    waiters_peak,
    /// Waiters still queued when traversal first went quiet.
    waiters_at_first_quiescence,
    already_set_errors,
    /// Accesses to the block-start map.
    start_lookups,
    /// Linear runs decoded, each ending in one control-flow instruction.
    cfis_decoded,
    /// Edge targets and function entries handed to the block-start map.
    targets_processed,
    instructions_decoded,
    cache_hits,
    table_refreshes,
    /// Refreshes whose target set was not a superset of the previous one.
    table_shrinks,
    /// Lock acquisitions that found another holder inside an end entry.
    exclusivity_violations,
    /// Functions set to RETURN while their own traversal task was running.
    early_returns,
    quiescence_rounds,
}

impl Counters {
    pub(crate) fn inc(c: &AtomicU64) {
        c.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn max(c: &AtomicU64, v: u64) {
        c.fetch_max(v, Ordering::Relaxed);
    }
}
