use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};

use super::*;
use crate::data::{synth_trajectory, window_samples, IntervalModel, SynthKind};
use crate::forecaster::{prepare, ModelConfig, Variant};
use crate::prompt_lm::{FrozenLmProvider, StubProvider};

fn tiny_cfg(variant: Variant) -> ModelConfig {
    ModelConfig {
        h: 8,
        p: 4,
        patch_len: 4,
        patch_stride: 4,
        d_model: 4,
        enc_layers: 1,
        enc_heads: 2,
        hidden_dim: 6,
        prototypes: 3,
        dec_width: 8,
        dec_layers: 1,
        dec_heads: 2,
        flags: variant.flags(),
        ..ModelConfig::default()
    }
}

fn lm() -> Arc<dyn FrozenLmProvider> {
    Arc::new(StubProvider::new(50, 5, 3, 256))
}

fn data(cfg: &ModelConfig, lm: &Arc<dyn FrozenLmProvider>, seed: u64, n: usize) -> Vec<PreparedSample> {
    let len = cfg.h + cfg.p + n - 1;
    let m = IntervalModel::Jittered { delta: 60, sigma: 10.0 };
    let traj = synth_trajectory(SynthKind::Mixed, len, 1e-4, seed, m).unwrap();
    window_samples(&traj, cfg.h, cfg.p, 1)
        .iter()
        .map(|s| prepare(s, cfg, lm.as_ref(), "synthetic").unwrap())
        .collect()
}

fn trainer(variant: Variant, cfg: TrainConfig) -> Trainer {
    let mc = tiny_cfg(variant);
    Trainer::new(Maker::new(mc, 11, lm()).unwrap(), cfg).unwrap()
}

fn brute_force_min(losses: &[f64], lambda: f64) -> f64 {
    let n = losses.len();
    (0u32..1 << n)
        .map(|mask| {
            let v: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            spl_objective(losses, &v, lambda)
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn selection_rule_examples() {
    assert_eq!(easiness(&[0.1, 0.3], 0.2), vec![true, false]);
    assert_eq!(easiness(&[0.2], 0.2), vec![false]);
    assert_eq!(easiness(&[1e300, 5.0], f64::INFINITY), vec![true, true]);
    assert!((spl_objective(&[0.1, 0.3], &[true, false], 0.2) + 0.1).abs() < 1e-15);
    assert_eq!(spl_objective(&[0.1, 0.3], &[false, false], 0.2), 0.0);
}

#[test]
fn fallback_selects_the_easiest_sample() {
    let (v, forced) = select_with_fallback(&[0.9, 0.4, 0.7], 0.2);
    assert_eq!(v, vec![false, true, false]);
    assert!(forced);
    let (v, forced) = select_with_fallback(&[0.1, 0.4], 0.2);
    assert_eq!(v, vec![true, false]);
    assert!(!forced);
}

#[test]
fn pace_is_geometric() {
    let s = advance_pace(EasinessState::new(0.2, 1.0003));
    assert!((s.lambda - 0.20006).abs() < 1e-15);
    let mut s = EasinessState::new(0.2, 1.0003);
    for _ in 0..1000 {
        s = advance_pace(s);
    }
    let expected = 0.2 * 1.0003f64.powi(1000);
    assert!(((s.lambda - expected) / expected).abs() < 1e-9);
    assert!((s.lambda - 0.2699).abs() < 1e-4);
    let fixed = advance_pace(EasinessState::new(0.2, 1.0));
    assert_eq!(fixed.lambda, 0.2);
}

#[test]
fn selection_minimizes_the_objective_exhaustively() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let n = rng.random_range(1..=10);
        let losses: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let lambda = rng.random_range(0.01..1.0);
        let v = easiness(&losses, lambda);
        assert_eq!(spl_objective(&losses, &v, lambda), brute_force_min(&losses, lambda));
    }
}

proptest! {
    #[test]
    fn selection_is_optimal(losses in prop::collection::vec(0.0f64..2.0, 1..9), lambda in 0.001f64..2.0) {
        let v = easiness(&losses, lambda);
        prop_assert_eq!(spl_objective(&losses, &v, lambda), brute_force_min(&losses, lambda));
    }

    #[test]
    fn selection_grows_with_pace(losses in prop::collection::vec(0.0f64..1.0, 1..64)) {
        let mut s = EasinessState::new(0.05, 1.01);
        let mut last = 0;
        for _ in 0..400 {
            let count = easiness(&losses, s.lambda).iter().filter(|&&x| x).count();
            prop_assert!(count >= last);
            last = count;
            s = advance_pace(s);
        }
    }
}

#[test]
fn loss_breakdown_of_perfect_and_offset_outputs() {
    let cfg = tiny_cfg(Variant::Full);
    let lm = lm();
    let s = &data(&cfg, &lm, 1, 1)[0];
    let (p, h) = (cfg.p, cfg.h);
    let tg = &s.targets;
    let perfect = ModelOutput {
        pred_positions: Array2::from_shape_fn((p, 2), |(k, c)| tg.future_norm[c * p + k]),
        recon_positions: Array2::from_shape_fn((h, 2), |(k, c)| tg.recon[c * h + k]),
        pred_velocity: tg.velocity.clone(),
        pred_acceleration: tg.acceleration.clone(),
    };
    let l = sample_losses(&perfect, tg, 1.0, 1.0);
    assert_eq!(l, LossBreakdown::default());
    let mut off = perfect.clone();
    off.pred_positions.mapv_inplace(|x| x + 0.25);
    let l = sample_losses(&off, tg, 1.0, 1.0);
    assert!((l.pred_mae - 0.25).abs() < 1e-12);
    assert_eq!(l.easiness_loss, 0.0);
    assert!((l.total - 0.25).abs() < 1e-12);
}

#[test]
fn straight_track_true_speed_gives_zero_velocity_loss() {
    let cfg = tiny_cfg(Variant::Full);
    let lm = lm();
    let traj = synth_trajectory(SynthKind::Straight, 12, 0.0, 5, IntervalModel::Regular { delta: 60 }).unwrap();
    let s = prepare(&window_samples(&traj, 8, 4, 1)[0], &cfg, lm.as_ref(), "x").unwrap();
    let speed = traj.records[0].sog / 1.943_844_492_440_604_7;
    let out = ModelOutput {
        pred_positions: Array2::zeros((4, 2)),
        recon_positions: Array2::zeros((8, 2)),
        pred_velocity: vec![speed; 3],
        pred_acceleration: vec![0.0; 2],
    };
    let l = sample_losses(&out, &s.targets, 1.0, 1.0);
    assert!(l.vel_mae / speed < 1e-6, "{}", l.vel_mae);
    assert!(l.acc_mae < 1e-9);
}

#[test]
fn batch_losses_match_single_sample_breakdown() {
    let cfg = tiny_cfg(Variant::Full);
    let lm = lm();
    let model = Maker::new(cfg, 2, lm.clone()).unwrap();
    let ds = data(&model.cfg, &lm, 2, 3);
    let refs: Vec<&PreparedSample> = ds.iter().collect();
    let mut t = Tape::new(&model.params);
    let l = batch_losses(&model, &mut t, &refs, &[None, None, None], 1.0, 1.0);
    for (i, s) in ds.iter().enumerate() {
        let single = sample_losses(&model.forward(&s.input, None), &s.targets, 1.0, 1.0);
        let got = |v: Var| t.value(v)[[i, 0]];
        assert!((got(l.pred) - single.pred_mae).abs() < 1e-12);
        assert!((got(l.recon) - single.recon_mae).abs() < 1e-12);
        assert!((got(l.vel) - single.vel_mae).abs() < 1e-9 * (1.0 + single.vel_mae));
        assert!((got(l.acc) - single.acc_mae).abs() < 1e-9 * (1.0 + single.acc_mae));
        assert!((got(l.easiness) - single.easiness_loss).abs() < 1e-9 * (1.0 + single.easiness_loss));
    }
}

#[test]
fn logged_selections_replay_exactly() {
    let cfg = TrainConfig {
        epochs: 50,
        batch_size: 4,
        lr: 3e-3,
        lambda0: 0.5,
        growth: 1.003,
        ..TrainConfig::default()
    };
    let lm = lm();
    let model = Maker::new(tiny_cfg(Variant::Full), 3, lm.clone()).unwrap();
    let ds = data(&model.cfg, &lm, 3, 16);
    let mut log = Vec::new();
    train(model, &ds, &[], &cfg, &mut |r| {
        log.push(r.clone());
        Ok(())
    })
    .unwrap();
    let steps: Vec<&StepRecord> = log
        .iter()
        .filter_map(|r| match r {
            LogRecord::Step(s) => Some(s),
            _ => None,
        })
        .collect();
    assert_eq!(steps.len(), 200);
    let mut lambda = cfg.lambda0;
    for s in &steps {
        assert_eq!(s.lambda, lambda);
        let mut expect: Vec<bool> = s.easiness.iter().map(|&l| l < lambda).collect();
        if !expect.contains(&true) {
            let i = (0..expect.len())
                .min_by(|&a, &b| s.easiness[a].total_cmp(&s.easiness[b]))
                .unwrap();
            expect[i] = true;
        }
        assert_eq!(s.selected, expect, "step {}", s.step);
        let n = expect.iter().filter(|&&x| x).count();
        assert_eq!(s.selected_fraction, n as f64 / expect.len() as f64);
        lambda *= cfg.growth;
    }
    assert!(steps.iter().any(|s| s.forced_selection) || steps.iter().any(|s| s.selected_fraction < 1.0));
}

#[test]
fn trainer_advances_lambda_per_step() {
    let mut tr = trainer(Variant::Full, TrainConfig::default());
    let lm = lm();
    let ds = data(&tr.model.cfg, &lm, 6, 2);
    let refs: Vec<&PreparedSample> = ds.iter().collect();
    for _ in 0..20 {
        tr.batch_step(&refs).unwrap();
    }
    let expected = 0.2 * 1.0003f64.powi(20);
    assert!(((tr.state.lambda - expected) / expected).abs() < 1e-12);
    assert_eq!(tr.training_state().step, 20);
}

#[test]
fn disabled_ksl_is_plain_adam() {
    let tc = TrainConfig {
        lambda0: 1e-9,
        ..TrainConfig::default()
    };
    let mut tr = trainer(Variant::NoKsl, tc.clone());
    let lm = lm();
    let ds = data(&tr.model.cfg, &lm, 7, 5);
    let refs: Vec<&PreparedSample> = ds.iter().collect();

    let mut plain = Maker::new(tiny_cfg(Variant::NoKsl), 11, lm.clone()).unwrap();
    let mut adam = Adam::new(&plain.params, tc.lr);
    for step in 0..10u64 {
        let rec = tr.batch_step(&refs).unwrap();
        assert_eq!(rec.selected_fraction, 1.0);
        assert_eq!(rec.lambda, 1e-9);

        let q = plain.encoder().q();
        let plans: Vec<_> = (0..refs.len())
            .map(|i| MaskPlan::draw(q, plain.cfg.channels, plain.cfg.mask_ratio, mask_seed(tc.seed, step, i)).unwrap())
            .collect();
        let masks: Vec<_> = plans.iter().map(Option::as_ref).collect();
        let grads = {
            let mut t = Tape::new(&plain.params);
            let l = batch_losses(&plain, &mut t, &refs, &masks, 1.0, 1.0);
            let per = t.add(l.pred, l.easiness);
            let loss = t.mean_all(per);
            t.backward(loss).into_params()
        };
        adam.step(&mut plain.params, &grads);
    }
    assert_eq!(tr.model.params.checksum(), plain.params.checksum());
}

fn gradients(tr: &Trainer, batch: &[&PreparedSample], v: &[bool], scope: GateScope) -> Vec<Option<Mat>> {
    let mut t = Tape::new(&tr.model.params);
    let l = batch_losses(&tr.model, &mut t, batch, &[None, None], 1.0, 1.0);
    let obj = gated_objective(&mut t, &l, v, scope);
    t.backward(obj).into_params()
}

#[test]
fn unselected_samples_contribute_no_gated_gradient() {
    let tr = trainer(Variant::Full, TrainConfig::default());
    let lm = lm();
    let ds = data(&tr.model.cfg, &lm, 8, 2);
    let other = data(&tr.model.cfg, &lm, 99, 1).remove(0);
    let v = [true, false];

    // Recon/kinematic gating: the easiness targets of sample 1 are irrelevant.
    let mut zeroed = ds[1].clone();
    zeroed.targets.recon.iter_mut().for_each(|x| *x = 0.0);
    zeroed.targets.velocity.iter_mut().for_each(|x| *x = 0.0);
    zeroed.targets.acceleration.iter_mut().for_each(|x| *x = 0.0);
    let a = gradients(&tr, &[&ds[0], &ds[1]], &v, GateScope::ReconKinematic);
    let b = gradients(&tr, &[&ds[0], &zeroed], &v, GateScope::ReconKinematic);
    assert_eq!(a, b);

    // Full gating: swapping sample 1 wholesale changes nothing.
    let a = gradients(&tr, &[&ds[0], &ds[1]], &v, GateScope::All);
    let b = gradients(&tr, &[&ds[0], &other], &v, GateScope::All);
    assert_eq!(a, b);
    // ...whereas a selected sample does matter.
    let c = gradients(&tr, &[&ds[0], &other], &[true, true], GateScope::All);
    assert_ne!(a, c);
}

#[test]
fn training_is_deterministic() {
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 3,
        ..TrainConfig::default()
    };
    let lm = lm();
    let run = || {
        let model = Maker::new(tiny_cfg(Variant::Full), 5, lm.clone()).unwrap();
        let ds = data(&model.cfg, &lm, 5, 7);
        let out = train(model, &ds[..5], &ds[5..], &cfg, &mut |_| Ok(())).unwrap();
        (out.model.params.checksum(), out.best_params.checksum(), out.final_val_mae_deg)
    };
    assert_eq!(run(), run());
}

#[test]
fn empty_dataset_and_bad_config() {
    let lm = lm();
    let model = Maker::new(tiny_cfg(Variant::Full), 5, lm).unwrap();
    let err = train(model, &[], &[], &TrainConfig::default(), &mut |_| Ok(())).err().unwrap();
    assert!(err.is_config());
    let model = Maker::new(tiny_cfg(Variant::Full), 5, self::lm()).unwrap();
    let bad = TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    };
    assert!(Trainer::new(model, bad).err().unwrap().is_config());
    assert_eq!("all".parse::<GateScope>().unwrap(), GateScope::All);
    assert!("some".parse::<GateScope>().is_err());
}

#[test]
fn non_finite_loss_aborts_the_step() {
    let mut tr = trainer(Variant::Full, TrainConfig::default());
    let lm = lm();
    let ds = data(&tr.model.cfg, &lm, 9, 1);
    let id = tr.model.params.id("dec.head.b").unwrap();
    tr.model.params.get_mut(id)[[0, 0]] = f64::NAN;
    let before = tr.model.params.checksum();
    let err = tr.batch_step(&[&ds[0]]).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    assert_eq!(tr.step_count(), 0);
    assert_eq!(tr.model.params.checksum(), before);
}

#[test]
fn single_sample_reconstruction_overfits() {
    let cfg = TrainConfig {
        lr: 1e-2,
        lambda0: 1e6,
        growth: 1.0,
        ..TrainConfig::default()
    };
    let mut tr = trainer(Variant::Full, cfg);
    let lm = lm();
    let ds = data(&tr.model.cfg, &lm, 10, 1);
    let mut last = None;
    for _ in 0..500 {
        last = Some(tr.batch_step(&[&ds[0]]).unwrap());
    }
    let last = last.unwrap();
    assert!(last.losses.recon_mae < 5e-2, "{:?}", last.losses);
}
