//! Point-to-point latency and tree all-reduce over in-process worker lanes.

use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Barrier;
use std::time::Instant;

use super::BenchError;
use crate::scalar::Scalar;

fn check_lanes(lanes: usize) -> Result<(), BenchError> {
    if lanes < 2 {
        Err(BenchError::InvalidLanes(lanes))
    } else {
        Ok(())
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Median one-way latency in microseconds for `iters` ping-pongs of a
/// `bytes`-long message between lane 0 and lane 1.
pub fn ping_pong(bytes: usize, iters: usize) -> Result<f64, BenchError> {
    let (to_peer, peer_rx) = channel::<Vec<u8>>();
    let (to_origin, origin_rx) = channel::<Vec<u8>>();
    let payload = vec![0xA5u8; bytes];
    let samples = std::thread::scope(|s| {
        s.spawn(move || {
            while let Ok(msg) = peer_rx.recv() {
                if to_origin.send(msg).is_err() {
                    break;
                }
            }
        });
        let mut samples = Vec::with_capacity(iters);
        for _ in 0..iters {
            let start = Instant::now();
            to_peer.send(payload.clone()).expect("peer alive");
            let back = origin_rx.recv().expect("peer alive");
            samples.push(start.elapsed().as_secs_f64() * 1e6 / 2.0);
            if back != payload {
                return Err(BenchError::Incorrect("ping-pong payload corrupted".into()));
            }
        }
        drop(to_peer);
        Ok(samples)
    })?;
    Ok(median(samples).max(1e-6))
}

pub fn measure_latency(lanes: usize, bytes: usize, iters: usize, runs: usize) -> Result<Vec<f64>, BenchError> {
    check_lanes(lanes)?;
    (0..runs).map(|_| ping_pong(bytes, iters)).collect()
}

struct Lane<T> {
    parent: Option<Sender<T>>,
    from_parent: Option<Receiver<T>>,
    children: Vec<(Receiver<T>, Sender<T>)>,
}

fn build_tree<T>(lanes: usize) -> Vec<Lane<T>> {
    let mut nodes: Vec<Lane<T>> = (0..lanes)
        .map(|_| Lane {
            parent: None,
            from_parent: None,
            children: Vec::new(),
        })
        .collect();
    // Binary tree: lane i has children 2i+1 and 2i+2.
    for child in 1..lanes {
        let parent = (child - 1) / 2;
        let (up_tx, up_rx) = channel();
        let (down_tx, down_rx) = channel();
        nodes[child].parent = Some(up_tx);
        nodes[child].from_parent = Some(down_rx);
        nodes[parent].children.push((up_rx, down_tx));
    }
    nodes
}

/// Reduce up a binary tree then broadcast down, `iters` times. Returns the
/// value every lane holds after the last round and per-round timings.
pub fn tree_allreduce<T: Scalar>(contributions: &[T], iters: usize) -> Result<(Vec<T>, Vec<f64>), BenchError> {
    let lanes = contributions.len();
    check_lanes(lanes)?;
    let tree = build_tree::<T>(lanes);
    let barrier = Barrier::new(lanes);
    let results = std::thread::scope(|s| {
        let handles: Vec<_> = tree
            .into_iter()
            .zip(contributions.iter().copied())
            .map(|(lane, mine)| {
                let barrier = &barrier;
                s.spawn(move || {
                    let mut held = T::zero();
                    let mut times = Vec::with_capacity(iters);
                    for _ in 0..iters {
                        barrier.wait();
                        let start = Instant::now();
                        let mut acc = mine;
                        for (up, _) in &lane.children {
                            acc += up.recv().expect("child alive");
                        }
                        let total = match (&lane.parent, &lane.from_parent) {
                            (Some(p), Some(down)) => {
                                p.send(acc).expect("parent alive");
                                down.recv().expect("parent alive")
                            }
                            _ => acc,
                        };
                        for (_, down) in &lane.children {
                            down.send(total).expect("child alive");
                        }
                        times.push(start.elapsed().as_secs_f64() * 1e6);
                        held = total;
                    }
                    (held, times)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("lane panicked"))
            .collect::<Vec<_>>()
    });
    let held = results.iter().map(|(v, _)| *v).collect();
    // Lane 0 finishes each round last among the roots of the broadcast.
    let times = results.into_iter().next().map(|(_, t)| t).unwrap_or_default();
    Ok((held, times))
}

/// Per run: median microseconds per all-reduce, with contributions `1..=n`
/// checked against `n(n+1)/2` on every lane.
pub fn measure_allreduce<T: Scalar>(lanes: usize, iters: usize, runs: usize) -> Result<Vec<f64>, BenchError> {
    check_lanes(lanes)?;
    let contributions: Vec<T> = (1..=lanes).map(|i| T::from_usize(i).expect("small int")).collect();
    let expected = T::from_usize(lanes * (lanes + 1) / 2).expect("small int");
    let mut out = Vec::with_capacity(runs);
    for _ in 0..runs {
        let (held, times) = tree_allreduce(&contributions, iters)?;
        if held.iter().any(|v| *v != expected) {
            return Err(BenchError::Incorrect(format!("all-reduce sums {held:?}, expected {expected}")));
        }
        out.push(median(times).max(1e-6));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allreduce_exact_sums() {
        for n in [2usize, 3, 5, 8, 13] {
            let contributions: Vec<f64> = (1..=n).map(|i| i as f64).collect();
            let (held, _) = tree_allreduce(&contributions, 3).unwrap();
            assert_eq!(held, vec![(n * (n + 1) / 2) as f64; n]);
        }
    }

    #[test]
    fn one_lane_is_invalid() {
        assert_eq!(measure_latency(1, 0, 10, 5), Err(BenchError::InvalidLanes(1)));
        assert_eq!(measure_allreduce::<f64>(1, 10, 5), Err(BenchError::InvalidLanes(1)));
    }

    #[test]
    fn latency_is_positive() {
        let runs = measure_latency(2, 8, 50, 5).unwrap();
        assert_eq!(runs.len(), 5);
        assert!(runs.iter().all(|v| v.is_finite() && *v > 0.0));
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
