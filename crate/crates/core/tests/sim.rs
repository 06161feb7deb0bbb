use proptest::prelude::*;
use rachsim::rng::RngStream;
use rachsim::sim::{advance_backlog, expected_moments, run_frame, ControlAction, Device, Simulator};

/// Independent re-implementation of the documented generator, used to
/// replay a frame's draws by hand.
struct Oracle {
    s: [u64; 4],
}

impl Oracle {
    fn new(seed: u64, stream: u64) -> Self {
        let mut x = seed ^ stream.wrapping_mul(0xD1B54A32D192ED03);
        let mut s = [0u64; 4];
        for w in &mut s {
            x = x.wrapping_add(0x9E3779B97F4A7C15);
            let mut z = x;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
            *w = z ^ (z >> 31);
        }
        Self { s }
    }

    fn next(&mut self) -> u64 {
        let r = (self.s[1].wrapping_mul(5)).rotate_left(7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        r
    }

    fn unit(&mut self) -> f64 {
        (self.next() >> 11) as f64 / 9007199254740992.0
    }

    fn below(&mut self, n: u64) -> u64 {
        loop {
            let m = self.next() as u128 * n as u128;
            // Lemire rejection zone: low word below 2^64 mod n.
            if (m as u64) >= (u64::MAX - n + 1) % n {
                return (m >> 64) as u64;
            }
        }
    }
}

#[test]
fn two_device_frame_matches_hand_replay() {
    for seed in 0..64u64 {
        for window in [0u32, 4] {
            let mut backlog = vec![Device::new(0, 0), Device::new(1, 0)];
            let action = ControlAction::new(1.0, window, 2);
            let report = run_frame(&mut backlog, 0, &action, 10, &mut RngStream::new(seed, 9)).unwrap();

            let mut o = Oracle::new(seed, 9);
            assert!(o.unit() < 1.0);
            let c0 = o.below(2);
            assert!(o.unit() < 1.0);
            let c1 = o.below(2);
            if c0 == c1 {
                assert_eq!((report.observation.idle, report.observation.success, report.observation.collision), (1, 0, 1));
                assert_eq!(backlog.len(), 2);
                for d in &backlog {
                    let offset = if window > 0 { o.below(window as u64 + 1) } else { 0 };
                    assert_eq!(d.attempts, 1);
                    assert_eq!(d.backoff_until, 1 + offset, "seed {seed}");
                }
            } else {
                assert_eq!((report.observation.idle, report.observation.success, report.observation.collision), (0, 2, 0));
                assert!(backlog.is_empty());
            }
        }
    }
}

#[test]
fn moments_two_devices_two_channels_brute_force() {
    // All four placements are equally likely: two splits, two pile-ups.
    let (mut i, mut s, mut c) = (0.0, 0.0, 0.0);
    for a in 0..2 {
        for b in 0..2 {
            if a == b {
                i += 1.0;
                c += 1.0;
            } else {
                s += 2.0;
            }
        }
    }
    let (ei, es, ec) = expected_moments(2.0, 2);
    assert!((ei - i / 4.0).abs() < 1e-12 && (es - s / 4.0).abs() < 1e-12 && (ec - c / 4.0).abs() < 1e-12);
}

#[test]
fn moments_fifty_four_closed_form() {
    let (i, s, c) = expected_moments(54.0, 54);
    assert!((i - 19.68).abs() < 0.01, "{i}");
    assert!((s - 20.05).abs() < 0.01, "{s}");
    assert!((c - 14.27).abs() < 0.01, "{c}");
}

fn empirical(n: u64, r: u32, frames: usize, seed: u64) -> ([f64; 3], [f64; 3]) {
    let mut rng = RngStream::new(seed, 0);
    let mut sum = [0.0; 3];
    let mut sq = [0.0; 3];
    let mut load = vec![0u32; r as usize];
    for _ in 0..frames {
        load.iter_mut().for_each(|l| *l = 0);
        for _ in 0..n {
            load[rng.below(r as u64) as usize] += 1;
        }
        let mut counts = [0.0; 3];
        for &l in &load {
            counts[(l as usize).min(2)] += 1.0;
        }
        for k in 0..3 {
            sum[k] += counts[k];
            sq[k] += counts[k] * counts[k];
        }
    }
    let f = frames as f64;
    let mean = sum.map(|x| x / f);
    let se = [0, 1, 2].map(|k| ((sq[k] / f - mean[k] * mean[k]).max(0.0) / f).sqrt());
    (mean, se)
}

#[test]
fn monte_carlo_moments_agree() {
    for r in [2u32, 54] {
        for n in [0u64, 1, 2, 3, 5, 10, 27, 54, 100, 150, 200] {
            let (mean, se) = empirical(n, r, 100_000, 1000 + n);
            let (ei, es, ec) = expected_moments(n as f64, r);
            for (k, e) in [ei, es, ec].into_iter().enumerate() {
                // 1% relative where the sample can resolve it; for vanishing
                // expectations (r = 2, large n) four standard errors, with
                // rare counts treated as Poisson.
                let tol = (0.01 * e).max(4.0 * se[k]).max(4.0 * (e / 1e5).sqrt());
                assert!((mean[k] - e).abs() <= tol, "n={n} r={r} k={k}: {} vs {e}", mean[k]);
            }
        }
    }
}

#[test]
fn zero_acb_only_accumulates() {
    let mut sim = Simulator::new(10, RngStream::new(3, 1));
    let action = ControlAction::new(0.0, 0, 54);
    let sizes: Vec<u64> = (0..5).map(|_| sim.step(10, &action).unwrap().true_backlog).collect();
    assert_eq!(sizes, vec![10, 20, 30, 40, 50]);
}

#[test]
fn identical_seeds_give_identical_reports() {
    let run = || {
        let mut sim = Simulator::new(10, RngStream::new(77, 1));
        (0..200)
            .map(|t| sim.step(30, &ControlAction::new(0.4 + 0.003 * t as f64, (t % 5) as u32, 54)).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frames_conserve_channels_and_devices(
        seed in any::<u64>(),
        arrivals in proptest::collection::vec(0u64..80, 1..40),
        p in 0.0f64..=1.0,
        window in 0u32..8,
        r in 1u32..60,
        limit in 1u32..4,
    ) {
        let mut rng = RngStream::new(seed, 1);
        let mut backlog: Vec<Device> = Vec::new();
        let mut next_id = 0;
        let mut dropped = std::collections::HashSet::new();
        for (t, &a) in arrivals.iter().enumerate() {
            let t = t as u64;
            advance_backlog(&mut backlog, &mut next_id, a, t);
            let before = backlog.len() as u64;
            let at_limit: std::collections::HashSet<u64> =
                backlog.iter().filter(|d| d.attempts == limit).map(|d| d.id).collect();
            let action = ControlAction::new(p, window, r);
            let rep = run_frame(&mut backlog, t, &action, limit, &mut rng).unwrap();
            let o = rep.observation;
            prop_assert_eq!(o.idle + o.success + o.collision, r);
            prop_assert_eq!(rep.successes.len() as u32, o.success);
            prop_assert!(rep.transmissions <= rep.true_backlog);
            prop_assert_eq!(backlog.len() as u64, before - o.success as u64 - rep.drops);
            prop_assert!(backlog.iter().all(|d| d.attempts <= limit && d.backoff_until >= d.arrival_frame));
            let remaining: std::collections::HashSet<u64> = backlog.iter().map(|d| d.id).collect();
            let succeeded: std::collections::HashSet<u64> = rep.successes.iter().map(|s| s.device_id).collect();
            let gone: Vec<u64> = at_limit.iter().copied().filter(|id| !remaining.contains(id) && !succeeded.contains(id)).collect();
            prop_assert_eq!(gone.len() as u64, rep.drops);
            for id in gone {
                dropped.insert(id);
            }
            prop_assert!(backlog.iter().all(|d| !dropped.contains(&d.id)));
        }
    }
}
