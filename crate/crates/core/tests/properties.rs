use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use proptest::prelude::*;
use sched_core::datatype::{decode, encode};
use sched_core::{
    apply_reduce_op, plan_binomial_bcast, Buffer, Datatype, Error, Event, EventKind, ReduceOp, Schedule, World,
    WorldConfig,
};

#[derive(Debug, Clone)]
struct Layout {
    /// Operations per requested round; zero-sized rounds are skipped.
    sizes: Vec<usize>,
    reset_at: usize,
    completion_at: usize,
    starts: usize,
}

fn layout() -> impl Strategy<Value = Layout> {
    (prop::collection::vec(0usize..3, 1..7), 1usize..4)
        .prop_flat_map(|(sizes, starts)| {
            let n = sizes.len();
            (Just(sizes), 0..=n, 0..=n, Just(starts))
        })
        .prop_map(|(sizes, a, b, starts)| Layout {
            sizes,
            reset_at: a.min(b),
            completion_at: a.max(b),
            starts,
        })
}

/// Launch count of every operation in global round `g`.
fn expected_runs(l: &Layout, g: usize) -> usize {
    if g >= l.reset_at && g < l.completion_at {
        l.starts
    } else {
        1
    }
}

/// Per-round hit counts and the committed reset, completion and length.
type SpanReport = Option<(Vec<usize>, usize, usize, usize)>;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spans_follow_marks(l in layout()) {
        let l2 = l.clone();
        let out = World::spawn(WorldConfig::inproc(1), move |comm| -> Result<SpanReport, Error> {
            let hits: Vec<_> = l2.sizes.iter().map(|_| Arc::new(AtomicUsize::new(0))).collect();
            let mut s = Schedule::new(comm, true);
            for g in 0..=l2.sizes.len() {
                if g == l2.reset_at {
                    s.mark_reset_point()?;
                }
                if g == l2.completion_at {
                    s.mark_completion_point()?;
                }
                let (Some(&size), Some(counter)) = (l2.sizes.get(g), hits.get(g)) else {
                    continue;
                };
                for _ in 0..size {
                    let h = Arc::clone(counter);
                    let op = ReduceOp::user(move |_, _, _, _| {
                        h.fetch_add(1, Ordering::SeqCst);
                    });
                    s.add_mpi_operation(op, Buffer::zeroed(0), Buffer::zeroed(0), 0, Datatype::Byte)?;
                }
                s.create_round()?;
            }
            let c = match s.commit() {
                Err(Error::EmptySchedule) => return Ok(None),
                other => other?,
            };
            let spans = s.spans().expect("committed");
            for _ in 0..l2.starts {
                c.start()?;
                c.wait()?;
            }
            s.free()?;
            let counts = hits.iter().map(|h| h.load(Ordering::SeqCst)).collect();
            Ok(Some((counts, spans.steady_run.start, spans.epilogue.start, spans.epilogue.end)))
        })
        .unwrap();
        let nonempty_before = |g: usize| l.sizes[..g].iter().filter(|&&n| n > 0).count();
        match out.results.into_iter().next().unwrap() {
            None => prop_assert!(l.sizes.iter().all(|&n| n == 0)),
            Some((counts, reset, completion, len)) => {
                prop_assert_eq!(reset, nonempty_before(l.reset_at));
                prop_assert_eq!(completion, nonempty_before(l.completion_at));
                prop_assert_eq!(len, nonempty_before(l.sizes.len()));
                for (g, &n) in l.sizes.iter().enumerate() {
                    prop_assert_eq!(counts[g], n * expected_runs(&l, g), "round {}", g);
                }
            }
        }
    }

    #[test]
    fn binomial_plans_are_valid_beyond_exhaustive_range(p in 33u32..300, root_seed in any::<u32>()) {
        let root = root_seed % p;
        let plan = plan_binomial_bcast(p, root).unwrap();
        prop_assert!(plan.validate().is_ok());
        let expected_rounds = 32 - (p - 1).leading_zeros() as usize;
        prop_assert_eq!(plan.rounds(), expected_rounds);
    }

    #[test]
    fn event_lines_round_trip(
        rank in any::<u32>(),
        seq in any::<u64>(),
        kind in prop::sample::select(vec![
            EventKind::Start,
            EventKind::Complete,
            EventKind::RoundLaunch,
            EventKind::CompositeComplete,
            EventKind::EpilogueStart,
            EventKind::Test,
        ]),
        schedule in prop::option::of(any::<u64>()),
        round in prop::option::of(0usize..1000),
        op in prop::option::of(0usize..1000),
    ) {
        let e = Event { rank, seq, kind, schedule, round: schedule.and(round), op };
        prop_assert_eq!(e.to_string().parse::<Event>(), Ok(e));
    }

    #[test]
    fn int32_sum_is_elementwise_wrapping(pairs in prop::collection::vec((any::<i32>(), any::<i32>()), 0..64)) {
        let (a, b): (Vec<i32>, Vec<i32>) = pairs.into_iter().unzip();
        let mut out = encode(&b);
        apply_reduce_op(&ReduceOp::Sum, &encode(&a), &mut out, a.len(), Datatype::Int32).unwrap();
        let want: Vec<i32> = a.iter().zip(&b).map(|(x, y)| x.wrapping_add(*y)).collect();
        prop_assert_eq!(decode::<i32>(&out), want);
    }

    #[test]
    fn float_encoding_round_trips(values in prop::collection::vec(any::<f64>(), 0..64)) {
        let back = decode::<f64>(&encode(&values));
        prop_assert!(back.iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert_eq!(back.len(), values.len());
    }
}
