use efanet::autodiff::{Adam, AdamConfig, ConvGeom, Mode};
use efanet::model::loss::total_loss;
use efanet::model::{EdgeWeight, Scm};
use efanet::nn::{Conv2d, Ctx};
use efanet::{EfaNet, ModelConfig, ModelOutput, ParamStore, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[path = "common/ledger.rs"]
mod ledger;

use ledger::toy_ledger;

fn toy_config() -> ModelConfig {
    ModelConfig::from_text(include_str!("../../../configs/toy.cfg")).unwrap()
}

fn random_tensor(shape: Shape, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    let data = (0..shape.numel()).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// A disc mask and a ring around its border.
fn disc_targets(size: usize, n: usize) -> (Tensor<f64>, Tensor<f64>) {
    let shape = Shape::new(n, 1, size, size);
    let c = size as f64 / 2.0;
    let r = size as f64 / 4.0;
    let mut mask = Tensor::zeros(shape);
    let mut edge = Tensor::zeros(shape);
    for b in 0..n {
        for y in 0..size {
            for x in 0..size {
                let d = ((y as f64 + 0.5 - c).powi(2) + (x as f64 + 0.5 - c - b as f64).powi(2)).sqrt();
                let i = mask.index(b, 0, y, x);
                if d <= r {
                    mask.data_mut()[i] = 1.0;
                }
                if (d - r).abs() <= 1.0 {
                    edge.data_mut()[i] = 1.0;
                }
            }
        }
    }
    (mask, edge)
}

#[test]
fn side_outputs_match_input_resolution() {
    let net = EfaNet::new(ModelConfig::default()).unwrap();
    let params = net.init_params::<f32>(1);
    for size in [64, 96] {
        let mut ctx = Ctx::new(&params, Mode::Eval);
        let x = ctx.input(Tensor::full(Shape::new(1, 1, size, size), 0.3));
        let out = net.forward(&mut ctx, x).unwrap();
        for v in out.side.iter().chain([&out.edge]) {
            assert_eq!(ctx.shape(*v), Shape::new(1, 1, size, size));
        }
        assert_eq!(ctx.shape(out.edge_feature), Shape::new(1, 32, size / 2, size / 2));
    }
}

#[test]
fn invalid_input_size_rejected() {
    let net = EfaNet::new(toy_config()).unwrap();
    let params = net.init_params::<f64>(0);
    let mut ctx = Ctx::new(&params, Mode::Eval);
    let x = ctx.input(Tensor::zeros(Shape::new(1, 1, 48, 64)));
    assert!(net.forward(&mut ctx, x).is_err());
}

#[test]
fn eval_forward_is_deterministic() {
    let net = EfaNet::new(toy_config()).unwrap();
    let params = net.init_params::<f64>(3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_tensor(Shape::new(1, 1, 32, 32), &mut rng, 0.0, 1.0);
    let a = net.predict(&params, x.clone()).unwrap();
    let b = net.predict(&params, x).unwrap();
    assert_eq!(a, b);
}

/// Nonzero offsets of a single-channel map relative to its centre.
fn support(t: &Tensor<f64>, centre: usize) -> Vec<(i64, i64)> {
    let s = t.shape();
    let mut out = Vec::new();
    for y in 0..s.h {
        for x in 0..s.w {
            if t.at(0, 0, y, x).abs() > 1e-12 {
                out.push((y as i64 - centre as i64, x as i64 - centre as i64));
            }
        }
    }
    out
}

#[test]
fn scm_branches_reach_their_dilation() {
    let rates = [2, 4, 8];
    let scm = Scm::new("scm", 1, 1, &rates);
    let mut params = ParamStore::<f64>::new();
    scm.init(&mut params, &mut ChaCha8Rng::seed_from_u64(0));
    params.get_mut("scm.split1.weight").unwrap().value = Tensor::ones(Shape::new(1, 1, 1, 1));
    for l in 1..=3 {
        params.get_mut(&format!("scm.branch{l}.conv.weight")).unwrap().value = Tensor::ones(Shape::new(1, 1, 3, 3));
    }

    let size = 33;
    let centre = 16;
    let mut impulse = Tensor::zeros(Shape::new(1, 1, size, size));
    let i = impulse.index(0, 0, centre, centre);
    impulse.data_mut()[i] = 1.0;

    let mut ctx = Ctx::new(&params, Mode::Eval);
    let x = ctx.input(impulse);
    let branches = scm.branch_outputs(&mut ctx, x).unwrap();
    let mut reach = Vec::new();
    for (&r, &b) in rates.iter().zip(&branches) {
        let pts = support(ctx.value(b), centre);
        let r = r as i64;
        let mut expected: Vec<(i64, i64)> = [-r, 0, r].iter().flat_map(|&dy| [-r, 0, r].map(|dx| (dy, dx))).collect();
        expected.sort();
        assert_eq!(pts, expected, "branch with rate {r}");
        reach.extend(pts.iter().flat_map(|&(dy, dx)| [dy, dx]).filter(|&d| d != 0));
    }
    reach.sort();
    reach.dedup();
    assert_eq!(reach, vec![-8, -4, -2, 2, 4, 8]);
}

#[test]
fn scm_zero_weights_give_zero_output() {
    let scm = Scm::new("scm", 3, 4, &[2, 4, 8]);
    let mut params = ParamStore::<f64>::new();
    scm.init(&mut params, &mut ChaCha8Rng::seed_from_u64(0));
    let names: Vec<String> = params.names().filter(|n| n.ends_with(".weight")).map(String::from).collect();
    for n in names {
        let p = params.get_mut(&n).unwrap();
        p.value = Tensor::zeros(p.value.shape());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ctx = Ctx::new(&params, Mode::Eval);
    let x = ctx.input(random_tensor(Shape::new(1, 3, 8, 8), &mut rng, -1.0, 1.0));
    let y = scm.forward(&mut ctx, x).unwrap();
    assert_eq!(ctx.shape(y), Shape::new(1, 4, 8, 8));
    assert!(ctx.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn edge_weight_stays_between_one_and_two_times_the_feature() {
    let ew = EdgeWeight::new(8);
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::<f64>::new();
        ew.proj.init(&mut params, &mut rng);
        let mut ctx = Ctx::new(&params, Mode::Eval);
        let fe = ctx.input(random_tensor(Shape::new(2, 8, 8, 8), &mut rng, -3.0, 3.0));
        let f = ctx.input(random_tensor(Shape::new(2, 5, 4, 4), &mut rng, 0.0, 2.0));
        let a = ew.attention(&mut ctx, fe).unwrap();
        let y = ew.apply(&mut ctx, f, a).unwrap();
        for (&o, &i) in ctx.value(y).data().iter().zip(ctx.value(f).data()) {
            assert!(o >= i && o <= 2.0 * i, "{o} not in [{i}, {}]", 2.0 * i);
        }
    }
}

#[test]
fn edge_weight_closed_forms() {
    let ew = EdgeWeight::new(1);
    let params = ParamStore::<f64>::new();
    let mut ctx = Ctx::new(&params, Mode::Eval);
    let f = ctx.input(Tensor::ones(Shape::new(1, 3, 4, 4)));
    for (a, want) in [(0.5, 1.5), (1.0, 2.0), (0.0, 1.0)] {
        let att = ctx.input(Tensor::full(Shape::new(1, 1, 2, 2), a));
        let y = ew.apply(&mut ctx, f, att).unwrap();
        assert!(ctx.value(y).data().iter().all(|&v| (v - want).abs() < 1e-15));
    }
}

fn loss_value(net: &EfaNet, params: &ParamStore<f64>, x: &Tensor<f64>, mask: &Tensor<f64>, edge: &Tensor<f64>) -> f64 {
    let mut ctx = Ctx::new(params, Mode::Train);
    let xv = ctx.input(x.clone());
    let out = net.forward(&mut ctx, xv).unwrap();
    total_loss(&mut ctx, &out, mask, edge, net.config.beta_edge).unwrap().1.total
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let net = EfaNet::new(toy_config()).unwrap();
    let params = net.init_params::<f64>(11);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random_tensor(Shape::new(1, 1, 32, 32), &mut rng, 0.0, 1.0);
    let (mask, edge) = disc_targets(32, 1);

    let mut ctx = Ctx::new(&params, Mode::Train);
    let xv = ctx.input(x.clone());
    let out = net.forward(&mut ctx, xv).unwrap();
    let (loss, _) = total_loss(&mut ctx, &out, &mask, &edge, net.config.beta_edge).unwrap();
    ctx.tape.backward(loss).unwrap();
    let pass = ctx.finish();

    let names: Vec<String> =
        params.iter().filter(|(_, p)| p.trainable).map(|(n, _)| n.to_string()).collect();
    let h = 1e-5;
    let mut checked = 0;
    while checked < 3 {
        let name = &names[rng.gen_range(0..names.len())];
        let grad = pass.param_grad(name).expect("every trainable parameter receives a gradient");
        let k = rng.gen_range(0..grad.numel());
        let analytic = grad.data()[k];
        let mut probe = params.clone();
        let at = |p: &mut ParamStore<f64>, d: f64| p.get_mut(name).unwrap().value.data_mut()[k] += d;
        at(&mut probe, h);
        let up = loss_value(&net, &probe, &x, &mask, &edge);
        at(&mut probe, -2.0 * h);
        let down = loss_value(&net, &probe, &x, &mask, &edge);
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        assert!(rel < 1e-3, "{name}[{k}]: analytic {analytic}, numeric {numeric}, rel {rel}");
        checked += 1;
    }
}

fn saturated_output(ctx: &mut Ctx<'_, f64>, mask: &Tensor<f64>, edge: &Tensor<f64>) -> ModelOutput {
    let side = ctx.input(mask.map(|g| if g > 0.5 { 20.0 } else { -20.0 }));
    let e = ctx.input(edge.map(|g| if g > 0.5 { 20.0 } else { -20.0 }));
    ModelOutput { side: [side; 4], edge: e, edge_feature: e }
}

#[test]
fn loss_breakdown_recomposes() {
    let net = EfaNet::new(toy_config()).unwrap();
    let params = net.init_params::<f64>(2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mask, edge) = disc_targets(32, 2);
    for beta in [5.0, 0.7, 0.0] {
        let mut ctx = Ctx::new(&params, Mode::Train);
        let x = ctx.input(random_tensor(Shape::new(2, 1, 32, 32), &mut rng, 0.0, 1.0));
        let out = net.forward(&mut ctx, x).unwrap();
        let (_, b) = total_loss(&mut ctx, &out, &mask, &edge, beta).unwrap();
        assert!((b.total - b.recomposed()).abs() < 1e-12);
        if beta == 0.0 {
            assert_eq!(b.total, b.seg.iter().sum::<f64>());
        }
    }
}

#[test]
fn saturated_correct_outputs_have_tiny_loss() {
    let params = ParamStore::<f64>::new();
    let (mask, edge) = disc_targets(32, 1);
    let mut ctx = Ctx::new(&params, Mode::Train);
    let out = saturated_output(&mut ctx, &mask, &edge);
    let (_, b) = total_loss(&mut ctx, &out, &mask, &edge, 5.0).unwrap();
    assert!(b.total < 5e-3, "total {}", b.total);
}

#[test]
fn beta_zero_drops_the_edge_term() {
    let params = ParamStore::<f64>::new();
    let (mask, edge) = disc_targets(32, 1);
    let wrong_edge = edge.map(|g| 1.0 - g);
    let mut ctx = Ctx::new(&params, Mode::Train);
    let out = saturated_output(&mut ctx, &mask, &wrong_edge);
    let (_, with_edge) = total_loss(&mut ctx, &out, &mask, &edge, 5.0).unwrap();
    let (_, without) = total_loss(&mut ctx, &out, &mask, &edge, 0.0).unwrap();
    assert!(with_edge.total > 10.0);
    assert_eq!(without.total, without.seg.iter().sum::<f64>());
}

#[test]
fn one_adam_step_usually_lowers_the_loss() {
    let net = EfaNet::new(toy_config()).unwrap();
    let (mask, edge) = disc_targets(32, 2);
    let mut decreased = 0;
    for seed in 0..10 {
        let mut params = net.init_params::<f64>(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = random_tensor(Shape::new(2, 1, 32, 32), &mut rng, 0.0, 1.0);
        let before = loss_value(&net, &params, &x, &mask, &edge);
        let mut adam = Adam::new(AdamConfig { lr: 1e-4, ..AdamConfig::default() });
        net.train_step(&mut params, &mut adam, x.clone(), &mask, &edge).unwrap();
        let after = loss_value(&net, &params, &x, &mask, &edge);
        if after < before {
            decreased += 1;
        }
    }
    assert!(decreased >= 9, "loss decreased for {decreased} of 10 seeds");
}

#[test]
fn zero_learning_rate_leaves_weights_unchanged() {
    let net = EfaNet::new(toy_config()).unwrap();
    let mut params = net.init_params::<f64>(4);
    let before = params.clone();
    let (mask, edge) = disc_targets(32, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_tensor(Shape::new(2, 1, 32, 32), &mut rng, 0.0, 1.0);
    let mut adam = Adam::new(AdamConfig { lr: 0.0, ..AdamConfig::default() });
    net.train_step(&mut params, &mut adam, x, &mask, &edge).unwrap();
    for (name, p) in params.iter().filter(|(_, p)| p.trainable) {
        assert_eq!(p.value, before.get(name).unwrap().value, "{name}");
    }
}

#[test]
fn single_conv_cost() {
    let conv = Conv2d::new("conv", 3, 8, 3, ConvGeom::same(3, 1));
    let mut params = ParamStore::<f32>::new();
    conv.init(&mut params, &mut ChaCha8Rng::seed_from_u64(0));
    let mut ctx = Ctx::costing(&params);
    let x = ctx.input(Tensor::zeros(Shape::new(1, 3, 16, 16)));
    conv.forward(&mut ctx, x).unwrap();
    let report = ctx.into_cost_report(16, 16);
    assert_eq!(report.total_params(), 224);
    assert_eq!(report.total_flops(), 110_592);
}

#[test]
fn analyzer_matches_hand_ledger() {
    let net = EfaNet::new(toy_config()).unwrap();
    let report = net.analyze(32, 32).unwrap();
    let ledger = toy_ledger();
    assert_eq!(report.per_module(), ledger.rows);
    let (p, f) = ledger.rows.values().fold((0, 0), |(p, f), &(a, b)| (p + a, f + b));
    assert_eq!(report.total_params(), p);
    assert_eq!(report.total_flops(), f);
}

#[test]
fn analyzer_params_match_the_parameter_store() {
    let net = EfaNet::new(toy_config()).unwrap();
    let store = net.init_params::<f32>(0);
    let trainable: u64 = store.iter().filter(|(_, p)| p.trainable).map(|(_, p)| p.value.numel() as u64).sum();
    assert_eq!(net.analyze(32, 32).unwrap().total_params(), trainable);
}

#[test]
fn params_fixed_and_conv_flops_scale_with_area() {
    let net = EfaNet::new(toy_config()).unwrap();
    let small = net.analyze(32, 32).unwrap();
    let large = net.analyze(64, 64).unwrap();
    assert_eq!(small.total_params(), large.total_params());
    for (a, b) in small.entries.iter().zip(&large.entries) {
        if a.kind != efanet::cost::CostKind::Conv {
            continue;
        }
        // pooled attention vectors stay 1x1 at every resolution
        let factor = if b.output.h * b.output.w == 1 { 1 } else { 4 };
        assert_eq!(b.flops, factor * a.flops, "{}", a.layer);
    }
}
