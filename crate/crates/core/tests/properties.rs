use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spae::advantage::{
    batch_normalize, group_advantage, saturation_penalty_factor, shaping_signal, spae_token_advantages, SpaeConfig,
};
use spae::diagnostics::{r2w_rate, variance_bins};
use spae::env::{generate_query, solve_reference, verify, TaskSpec};
use spae::model::{map_token_to_step, segment_steps, StepSlot, TokenId, TokenTrajectory, Vocab};
use spae::policy::{softmax, DecodeConfig, OverCheckPrior, PolicyOracle, TabularPolicy};
use spae::potential::{classify_phases, detect_r2w, saturation_count, Phase, PotentialSeries};
use spae::probe::{probe_step, token_entropy, ProbeConfig, ProbeRecord};

fn vocab() -> Vocab {
    Vocab::with_digits(10).unwrap()
}

/// Token sequences over digits plus the structural markers.
fn tokens_strategy() -> impl Strategy<Value = Vec<TokenId>> {
    let v = vocab();
    let pool: Vec<TokenId> = (0..10)
        .chain([v.delim(), v.delim(), v.wait(), v.think_end(), v.answer(), v.eot()])
        .collect();
    prop::collection::vec(prop::sample::select(pool), 0..40)
}

fn trajectory(tokens: Vec<TokenId>) -> TokenTrajectory {
    let n = tokens.len();
    TokenTrajectory::from_tokens(0, tokens, vec![0.0; n], &vocab(), false)
}

fn series_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![-1.0f64..=1.0, 0.88f64..=1.0], 0..20)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn steps_tile_the_reasoning_region(tokens in tokens_strategy()) {
        let t = trajectory(tokens);
        let mut cursor = 0;
        for s in &t.steps {
            prop_assert_eq!(s.start, cursor);
            prop_assert!(s.end > s.start);
            cursor = s.end;
        }
        prop_assert_eq!(cursor, t.reasoning_end);
    }

    #[test]
    fn token_step_map_is_a_bijection_and_stable(tokens in tokens_strategy()) {
        let v = vocab();
        let t = trajectory(tokens.clone());
        let map = map_token_to_step(&t);
        prop_assert_eq!(map.len(), t.len());
        for (j, slot) in map.slots().iter().enumerate() {
            match slot.step() {
                Some(k) => prop_assert!(t.step_span(k).unwrap().range().contains(&j)),
                None => prop_assert!(j >= t.reasoning_end),
            }
        }
        let covered: usize = t.steps.iter().map(|s| s.len()).sum();
        prop_assert_eq!(covered, t.reasoning_end);
        let again = segment_steps(&tokens, t.reasoning_end, v.delim());
        prop_assert_eq!(&again, &t.steps);
        prop_assert_eq!(map_token_to_step(&trajectory(tokens)), map);
    }

    #[test]
    fn verifier_reward_is_binary_and_reference_verifies(seed in any::<u64>(), tokens in tokens_strategy()) {
        let spec = TaskSpec::default();
        let v = spec.vocab().unwrap();
        let q = generate_query(seed, &spec).unwrap();
        prop_assert_eq!(&generate_query(seed, &spec).unwrap(), &q);
        let r = verify(&trajectory(tokens.clone()), &q, &v).reward;
        prop_assert!(r <= 1);
        let mut good = tokens.into_iter().filter(|&t| t != v.think_end()).collect::<Vec<_>>();
        good.push(v.think_end());
        good.push(v.answer());
        good.extend(solve_reference(&q, &v).unwrap());
        prop_assert_eq!(verify(&trajectory(good), &q, &v).reward, 1);
    }

    #[test]
    fn distributions_are_normalized(logits in prop::collection::vec(-30.0f64..30.0, 19), temp in 0.05f64..3.0, top_k in 0usize..25, top_p in 0.05f64..=1.0) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        let d = DecodeConfig { temperature: temp, top_k, top_p, max_len: 1 };
        let f = spae::policy::filtered_distribution(&logits, &d);
        prop_assert!((f.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(f.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn entropy_ignores_order(logits in prop::collection::vec(-5.0f64..5.0, 2..12), seed in any::<u64>()) {
        let p = softmax(&logits);
        let mut q = p.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(q.as_mut_slice(), &mut rng);
        prop_assert!((token_entropy(&p) - token_entropy(&q)).abs() <= 1e-12);
    }

    #[test]
    fn potential_properties(phi in series_strategy()) {
        let s = PotentialSeries::new(phi.clone(), 0.9).unwrap();
        let labels = classify_phases(&s).steps;
        let mut prev = 0;
        for k in 1..=phi.len() {
            let c = saturation_count(&s, k).unwrap();
            prop_assert!(c >= prev);
            prev = c;
            prop_assert_eq!(labels[k - 1] == Phase::Checking, c >= 1);
        }
        prop_assert!(!detect_r2w(&s, 1));
        let never = PotentialSeries::new(phi, f64::INFINITY).unwrap();
        prop_assert_eq!(r2w_rate([(&never, 0u8)]).value, 0.0);
    }

    #[test]
    fn penalty_is_monotone_and_bounded(c in 0usize..50, alpha in 0.01f64..=1.0) {
        let (f0, f1) = (saturation_penalty_factor(c, alpha), saturation_penalty_factor(c + 1, alpha));
        prop_assert!(f1 < f0 || (f0 - f1).abs() < 1e-15);
        prop_assert!(f1 >= 1.0 - alpha - 1e-15 && f0 <= 1.0);
    }

    #[test]
    fn shaping_centers(deltas in prop::collection::vec(-2.0f64..2.0, 1..60)) {
        let g = shaping_signal(&deltas).unwrap();
        prop_assert!(g.iter().sum::<f64>().abs() <= 1e-9);
    }
}

/// SPAE advantages for a batch of random trajectories with random series.
fn random_batch(seed: u64) -> (Vec<f64>, Vec<PotentialSeries>, Vec<TokenTrajectory>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = vocab();
    let n = rng.gen_range(2..8);
    let mut trajs = Vec::new();
    let mut series = Vec::new();
    for _ in 0..n {
        let mut tokens: Vec<TokenId> = (0..rng.gen_range(0..20))
            .map(|_| {
                if rng.gen_bool(0.3) {
                    v.delim()
                } else {
                    rng.gen_range(0..10)
                }
            })
            .collect();
        tokens.extend([v.think_end(), v.answer(), 3, v.eot()]);
        let t = trajectory(tokens);
        let phi = (0..t.num_steps()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        series.push(PotentialSeries::new(phi, 0.5).unwrap());
        trajs.push(t);
    }
    let rewards: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect();
    (group_advantage(&rewards), series, trajs)
}

#[test]
fn tokens_of_one_step_share_their_advantage() {
    for seed in 0..200 {
        let (adv, series, trajs) = random_batch(seed);
        let maps: Vec<_> = trajs.iter().map(map_token_to_step).collect();
        let raw = spae_token_advantages(&adv, &series, &maps, &SpaeConfig::default()).unwrap();
        for (row, map) in raw.values.iter().zip(&maps) {
            for (i, a) in map.slots().iter().enumerate() {
                for (j, b) in map.slots().iter().enumerate() {
                    if a == b && *a != StepSlot::Summary {
                        assert_eq!(row[i].to_bits(), row[j].to_bits());
                    }
                }
            }
        }
    }
}

#[test]
fn permuting_trajectories_permutes_final_advantages() {
    for seed in 0..200 {
        let (adv, series, trajs) = random_batch(seed);
        let maps: Vec<_> = trajs.iter().map(map_token_to_step).collect();
        let cfg = SpaeConfig::default();
        let base = batch_normalize(&spae_token_advantages(&adv, &series, &maps, &cfg).unwrap(), 1e-8).unwrap();
        let n = adv.len();
        let perm: Vec<usize> = (0..n).rev().collect();
        let pick = |xs: &[_]| perm.iter().map(|&i| xs[i]).collect::<Vec<f64>>();
        let adv_p = pick(&adv);
        let series_p: Vec<_> = perm.iter().map(|&i| series[i].clone()).collect();
        let maps_p: Vec<_> = perm.iter().map(|&i| maps[i].clone()).collect();
        let out = batch_normalize(&spae_token_advantages(&adv_p, &series_p, &maps_p, &cfg).unwrap(), 1e-8).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            for (a, b) in out.values[dst].iter().zip(&base.values[src]) {
                assert!((a - b).abs() <= 1e-12, "seed {seed}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn logprob_gradient_matches_finite_differences() {
    let v = vocab();
    let mut policy = TabularPolicy::with_prior(v, 2, &OverCheckPrior::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for l in policy.logits_mut() {
        *l += rng.gen_range(-1.0..1.0);
    }
    let size = v.size();
    let h = 1e-5;
    for _ in 0..100 {
        let row = rng.gen_range(0..policy.num_rows());
        let token = rng.gen_range(0..size) as TokenId;
        let decode = DecodeConfig::rollout(1);
        let (_, grad) = policy.row_logprob_and_grad(row, token, &decode);
        for (i, &g) in grad.iter().enumerate() {
            let orig = policy.row(row)[i];
            policy.row_mut(row)[i] = orig + h;
            let up = policy.row_logprob_and_grad(row, token, &decode).0;
            policy.row_mut(row)[i] = orig - h;
            let down = policy.row_logprob_and_grad(row, token, &decode).0;
            policy.row_mut(row)[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-3);
            assert!(err <= 1e-6, "row {row} token {token} entry {i}: fd {fd} vs {g}");
        }
    }
}

#[test]
fn cold_sampling_picks_the_argmax() {
    let spec = TaskSpec::default();
    let v = spec.vocab().unwrap();
    let mut policy = TabularPolicy::zeros(v, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for l in policy.logits_mut() {
        *l = rng.gen_range(-3.0..3.0);
    }
    let decode = DecodeConfig {
        temperature: 1e-3,
        top_k: 0,
        top_p: 1.0,
        max_len: 1,
    };
    for i in 0..100 {
        let q = generate_query(i, &spec).unwrap();
        let mut ctx = q.prompt.clone();
        ctx.extend((0..rng.gen_range(0..4)).map(|_| rng.gen_range(0..10)));
        let logits = policy.next_token_logits(&ctx);
        let best = (0..logits.len())
            .max_by(|&a, &b| logits[a].total_cmp(&logits[b]))
            .unwrap();
        let s = policy.sample(&ctx, &decode, &mut rng);
        assert_eq!(s.token as usize, best, "context {ctx:?}");
    }
}

#[test]
fn probes_stay_in_range_and_leave_inputs_untouched() {
    let spec = TaskSpec::default();
    let v = spec.vocab().unwrap();
    let mut policy = TabularPolicy::with_prior(v, 2, &OverCheckPrior::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for l in policy.logits_mut() {
        *l += rng.gen_range(-2.0..2.0);
    }
    let cfg = ProbeConfig::new(DecodeConfig::rollout(0));
    for i in 0..300 {
        let q = generate_query(1000 + i, &spec).unwrap();
        let g = spae::policy::sample_trajectory(&policy, &q, &v, &DecodeConfig::rollout(40), &mut rng);
        let (before_p, before_t) = (policy.clone(), g.trajectory.clone());
        for k in 1..=g.trajectory.num_steps() {
            let r = probe_step(&policy, &q, &g.trajectory, k, &cfg, &v, &mut rng).unwrap();
            assert!((0.0..=1.0).contains(&r.confidence) && (0.0..=1.0).contains(&r.correctness));
        }
        assert_eq!(policy, before_p);
        assert_eq!(g.trajectory, before_t);
    }
}

#[test]
fn deterministic_policy_has_no_probe_variance() {
    let spec = TaskSpec::default();
    let v = spec.vocab().unwrap();
    let mut policy = TabularPolicy::zeros(v, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for row in 0..policy.num_rows() {
        let hot = rng.gen_range(0..v.size());
        policy.row_mut(row)[hot] = 1e3;
    }
    let cfg = ProbeConfig::new(DecodeConfig::rollout(0));
    let mut sets: Vec<Vec<ProbeRecord>> = Vec::new();
    for i in 0..40 {
        let q = generate_query(i, &spec).unwrap();
        let mut tokens = vec![1, v.delim(), 2, v.delim(), 3, v.delim(), 4, v.delim(), 5];
        tokens.extend([v.think_end(), v.answer(), 5, v.eot()]);
        let t = trajectory(tokens);
        let records: Vec<_> = (1..=t.num_steps())
            .map(|k| probe_step(&policy, &q, &t, k, &cfg, &v, &mut rng).unwrap())
            .collect();
        sets.push(records);
    }
    let views: Vec<&[ProbeRecord]> = sets.iter().map(Vec::as_slice).collect();
    let bins = variance_bins(&views);
    for b in &bins.bins {
        assert!(b.var_conf.abs() < 1e-12 && b.var_acc.abs() < 1e-12);
    }
    let reversed: Vec<&[ProbeRecord]> = views.iter().rev().copied().collect();
    let again = variance_bins(&reversed);
    for (a, b) in again.bins.iter().zip(&bins.bins) {
        assert_eq!(a.count, b.count);
        assert!((a.var_conf - b.var_conf).abs() < 1e-15 && (a.var_acc - b.var_acc).abs() < 1e-15);
    }
}

#[test]
fn variance_bins_are_nonnegative_and_order_free() {
    let spec = TaskSpec::default();
    let v = spec.vocab().unwrap();
    let policy = TabularPolicy::with_prior(v, 2, &OverCheckPrior::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let cfg = ProbeConfig::new(DecodeConfig::rollout(0));
    let mut sets = Vec::new();
    for i in 0..60 {
        let q = generate_query(i, &spec).unwrap();
        let g = spae::policy::sample_trajectory(&policy, &q, &v, &DecodeConfig::rollout(64), &mut rng);
        let t = g.trajectory;
        let recs: Vec<_> = (1..=t.num_steps())
            .map(|k| probe_step(&policy, &q, &t, k, &cfg, &v, &mut rng).unwrap())
            .collect();
        sets.push(recs);
    }
    let views: Vec<&[ProbeRecord]> = sets.iter().map(Vec::as_slice).collect();
    let a = variance_bins(&views);
    let mut shuffled = views.clone();
    rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
    let b = variance_bins(&shuffled);
    for (x, y) in a.bins.iter().zip(&b.bins) {
        assert!(x.var_conf >= 0.0 && x.var_acc >= 0.0);
        assert_eq!(x.count, y.count);
        assert!((x.var_conf - y.var_conf).abs() < 1e-12 && (x.var_acc - y.var_acc).abs() < 1e-12);
    }
}
