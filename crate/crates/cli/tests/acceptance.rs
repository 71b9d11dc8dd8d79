//! The eight acceptance criteria, one pass/fail line each. Run with
//! `cargo test -p efanet-cli --test acceptance -- --nocapture` to see the
//! report; the desk training inside takes several minutes.

use std::fs;
use std::path::Path;
use std::time::Instant;

use efanet::autodiff::gradcheck::{check, composite_cases, op_cases};
use efanet::autodiff::Mode;
use efanet::data::io::write_image;
use efanet::data::synth::SynthConfig;
use efanet::data::synth_background;
use efanet::metrics::{dice_iou, e_measure_mean, s_measure, weighted_fmeasure};
use efanet::model::loss::total_loss;
use efanet::model::{EdgeWeight, Scm};
use efanet::nn::Ctx;
use efanet::{Checkpoint, EfaNet, ModelConfig, ModelOutput, ParamStore, RunConfig, Shape, Tensor};
use efanet_cli::train::total_steps;
use efanet_cli::{evaluate, predict, synth, train, EvalOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

#[path = "../../core/tests/common/ledger.rs"]
mod ledger;

const CONFIGS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn toy_model() -> ModelConfig {
    ModelConfig::from_text(&fs::read_to_string(format!("{CONFIGS}/toy.cfg")).unwrap()).unwrap()
}

fn random_tensor(shape: Shape, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn disc_targets(size: usize) -> (Tensor<f64>, Tensor<f64>) {
    let shape = Shape::new(1, 1, size, size);
    let (c, r) = (size as f64 / 2.0, size as f64 / 4.0);
    let mut mask = Tensor::zeros(shape);
    let mut edge = Tensor::zeros(shape);
    for y in 0..size {
        for x in 0..size {
            let d = ((y as f64 + 0.5 - c).powi(2) + (x as f64 + 0.5 - c).powi(2)).sqrt();
            let i = mask.index(0, 0, y, x);
            mask.data_mut()[i] = (d <= r) as u8 as f64;
            edge.data_mut()[i] = ((d - r).abs() <= 1.0) as u8 as f64;
        }
    }
    (mask, edge)
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut count = 0;
    for case in op_cases(0).into_iter().chain(composite_cases(1)) {
        let r = check(&case, 1e-3).unwrap();
        count += 1;
        if r.max_rel_err >= worst.0 {
            worst = (r.max_rel_err, r.name);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst.0 < 1e-4 && secs < 60.0,
        format!("{count} cases, worst {} at {:.2e}, {secs:.1} s", worst.1, worst.0),
    )
}

fn loss_value(net: &EfaNet, params: &ParamStore<f64>, x: &Tensor<f64>, mask: &Tensor<f64>, edge: &Tensor<f64>) -> f64 {
    let mut ctx = Ctx::new(params, Mode::Train);
    let xv = ctx.input(x.clone());
    let out = net.forward(&mut ctx, xv).unwrap();
    total_loss(&mut ctx, &out, mask, edge, net.config.beta_edge).unwrap().1.total
}

fn end_to_end_gradient() -> Outcome {
    let net = EfaNet::new(toy_model()).unwrap();
    let params = net.init_params::<f64>(21);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = random_tensor(Shape::new(1, 1, 32, 32), &mut rng, 0.0, 1.0);
    let (mask, edge) = disc_targets(32);
    let mut ctx = Ctx::new(&params, Mode::Train);
    let xv = ctx.input(x.clone());
    let out = net.forward(&mut ctx, xv).unwrap();
    let (loss, _) = total_loss(&mut ctx, &out, &mask, &edge, net.config.beta_edge).unwrap();
    ctx.tape.backward(loss).unwrap();
    let pass = ctx.finish();

    let names: Vec<String> = params.iter().filter(|(_, p)| p.trainable).map(|(n, _)| n.to_string()).collect();
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut probed = Vec::new();
    for _ in 0..3 {
        let name = &names[rng.gen_range(0..names.len())];
        let grad = pass.param_grad(name).unwrap();
        let k = rng.gen_range(0..grad.numel());
        let mut probe = params.clone();
        probe.get_mut(name).unwrap().value.data_mut()[k] += h;
        let up = loss_value(&net, &probe, &x, &mask, &edge);
        probe.get_mut(name).unwrap().value.data_mut()[k] -= 2.0 * h;
        let down = loss_value(&net, &probe, &x, &mask, &edge);
        let (a, n) = (grad.data()[k], (up - down) / (2.0 * h));
        worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-6));
        probed.push(format!("{name}[{k}]"));
    }
    outcome(worst < 1e-3, format!("{}; worst rel err {worst:.2e}", probed.join(", ")))
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut failures = Vec::new();
    for _ in 0..1000 {
        let pred: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let gt: Vec<u8> = (0..64).map(|_| rng.gen_range(0..=1)).collect();
        let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
        for (&p, &g) in pred.iter().zip(&gt) {
            match (p >= 0.5, g == 1) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fneg += 1.0,
                _ => {}
            }
        }
        let want = if tp + fp + fneg == 0.0 { (1.0, 1.0) } else { (2.0 * tp / (2.0 * tp + fp + fneg), tp / (tp + fp + fneg)) };
        if dice_iou(&pred, &gt, 0.5).unwrap() != want {
            failures.push("dice/iou oracle");
            break;
        }
    }

    let (mut s_worst, mut f_worst, mut e_min) = (0.0f64, 0.0f64, 1.0f64);
    for _ in 0..50 {
        let density = rng.gen_range(0.05..0.6);
        let gt: Vec<u8> = (0..256).map(|_| rng.gen_bool(density) as u8).collect();
        if !gt.contains(&1) {
            continue;
        }
        let exact: Vec<f64> = gt.iter().map(|&g| g as f64).collect();
        s_worst = s_worst.max((s_measure(&exact, &gt, 16, 16, 0.5).unwrap() - 1.0).abs());
        f_worst = f_worst.max((weighted_fmeasure(&exact, &gt, 16, 16, 1.0).unwrap() - 1.0).abs());
        e_min = e_min.min(e_measure_mean(&exact, &gt).unwrap());
    }
    if s_worst > 1e-6 {
        failures.push("s_measure self-identity");
    }
    if f_worst > 1e-6 {
        failures.push("weighted F self-identity");
    }
    if e_min < 0.996 {
        failures.push("e_measure on exact maps");
    }

    let mut out_of_range = 0;
    for _ in 0..1000 {
        let pred: Vec<f64> = (0..144).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let gt: Vec<u8> = (0..144).map(|_| rng.gen_range(0..=1)).collect();
        let (d, i) = dice_iou(&pred, &gt, 0.5).unwrap();
        let mut vals = vec![d, i, s_measure(&pred, &gt, 12, 12, 0.5).unwrap(), e_measure_mean(&pred, &gt).unwrap()];
        if gt.contains(&1) {
            vals.push(weighted_fmeasure(&pred, &gt, 12, 12, 1.0).unwrap());
        }
        out_of_range += vals.iter().filter(|v| !(0.0..=1.0).contains(*v)).count();
    }
    if out_of_range > 0 {
        failures.push("range");
    }
    outcome(
        failures.is_empty(),
        format!(
            "|S-1| {s_worst:.1e}, |Fw-1| {f_worst:.1e}, min E {e_min:.5}, {out_of_range} out-of-range values{}",
            if failures.is_empty() { String::new() } else { format!("; failed: {}", failures.join(", ")) }
        ),
    )
}

fn architecture_contracts() -> Outcome {
    let mut problems = Vec::new();
    let net = EfaNet::new(ModelConfig::default()).unwrap();
    let params = net.init_params::<f32>(1);
    for size in [64, 96] {
        let mut ctx = Ctx::new(&params, Mode::Eval);
        let x = ctx.input(Tensor::full(Shape::new(1, 1, size, size), 0.4));
        let out = net.forward(&mut ctx, x).unwrap();
        if out.side.iter().chain([&out.edge]).any(|&v| ctx.shape(v) != Shape::new(1, 1, size, size)) {
            problems.push(format!("output resolution at {size}"));
        }
    }

    let rates = [2, 4, 8];
    let scm = Scm::new("scm", 1, 1, &rates);
    let mut sp = ParamStore::<f64>::new();
    scm.init(&mut sp, &mut ChaCha8Rng::seed_from_u64(0));
    sp.get_mut("scm.split1.weight").unwrap().value = Tensor::ones(Shape::new(1, 1, 1, 1));
    for l in 1..=3 {
        sp.get_mut(&format!("scm.branch{l}.conv.weight")).unwrap().value = Tensor::ones(Shape::new(1, 1, 3, 3));
    }
    let mut impulse = Tensor::zeros(Shape::new(1, 1, 33, 33));
    let centre = impulse.index(0, 0, 16, 16);
    impulse.data_mut()[centre] = 1.0;
    let mut ctx = Ctx::new(&sp, Mode::Eval);
    let x = ctx.input(impulse);
    let mut offsets = Vec::new();
    for (&r, b) in rates.iter().zip(scm.branch_outputs(&mut ctx, x).unwrap()) {
        let v = ctx.value(b);
        let mut seen = Vec::new();
        for y in 0..33 {
            for x in 0..33 {
                if v.at(0, 0, y, x).abs() > 1e-12 {
                    seen.extend([y as i64 - 16, x as i64 - 16].into_iter().filter(|&d| d != 0));
                }
            }
        }
        seen.sort();
        seen.dedup();
        if seen != [-(r as i64), r as i64] {
            problems.push(format!("branch {r} reaches {seen:?}"));
        }
        offsets.extend(seen);
    }
    offsets.sort();

    let ew = EdgeWeight::new(8);
    let mut violations = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ep = ParamStore::<f64>::new();
        ew.proj.init(&mut ep, &mut rng);
        let mut ctx = Ctx::new(&ep, Mode::Eval);
        let fe = ctx.input(random_tensor(Shape::new(1, 8, 8, 8), &mut rng, -4.0, 4.0));
        let f = ctx.input(random_tensor(Shape::new(1, 6, 4, 4), &mut rng, 0.0, 3.0));
        let a = ew.attention(&mut ctx, fe).unwrap();
        let y = ew.apply(&mut ctx, f, a).unwrap();
        violations += ctx.value(y).data().iter().zip(ctx.value(f).data()).filter(|(&o, &i)| o < i || o > 2.0 * i).count();
    }
    if violations > 0 {
        problems.push(format!("{violations} edge-weight bound violations"));
    }
    outcome(problems.is_empty(), format!("impulse offsets {offsets:?}; {}", if problems.is_empty() { "all contracts hold".into() } else { problems.join(", ") }))
}

fn loss_composition() -> Outcome {
    let net = EfaNet::new(toy_model()).unwrap();
    let params = net.init_params::<f64>(41);
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (mask, edge) = disc_targets(32);
    let mut ctx = Ctx::new(&params, Mode::Train);
    let x = ctx.input(random_tensor(Shape::new(1, 1, 32, 32), &mut rng, 0.0, 1.0));
    let out = net.forward(&mut ctx, x).unwrap();
    let (_, b) = total_loss(&mut ctx, &out, &mask, &edge, 5.0).unwrap();
    let recomposition = (b.total - b.recomposed()).abs();
    let (_, b0) = total_loss(&mut ctx, &out, &mask, &edge, 0.0).unwrap();
    let beta_zero_gap = b0.total - b0.seg.iter().sum::<f64>();

    let empty = ParamStore::<f64>::new();
    let mut ctx = Ctx::new(&empty, Mode::Train);
    let side = ctx.input(mask.map(|g| if g > 0.5 { 20.0 } else { -20.0 }));
    let e = ctx.input(edge.map(|g| if g > 0.5 { 20.0 } else { -20.0 }));
    let saturated = ModelOutput { side: [side; 4], edge: e, edge_feature: e };
    let (_, bs) = total_loss(&mut ctx, &saturated, &mask, &edge, 5.0).unwrap();
    outcome(
        recomposition < 1e-12 && bs.total < 5e-3 && beta_zero_gap == 0.0,
        format!("recomposition {recomposition:.1e}, saturated total {:.2e}, beta=0 gap {beta_zero_gap:e}", bs.total),
    )
}

struct Desk {
    outcome: Outcome,
    notes: Vec<(bool, String)>,
}

fn desk_training(root: &Path) -> Desk {
    let data = root.join("desk");
    synth(200, 64, 7, &data).unwrap();
    let mut config = RunConfig::load(&Path::new(CONFIGS).join("desk.cfg")).unwrap();
    config.manifest = data.join("manifest.tsv");
    config.out_dir = root.join("run");
    let steps = total_steps(&config, 160);

    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let trained = pool.install(|| train(&config, |_, _, _| {})).unwrap();
    let secs = start.elapsed().as_secs_f64();

    let opts = EvalOptions { out_dir: Some(root.join("eval")), ..EvalOptions::default() };
    let (report, _) = evaluate(&trained.checkpoint, &config.manifest, &opts).unwrap();
    let m = report.means();
    let buckets = report.buckets();
    let populated: Vec<_> = buckets.iter().filter(|b| b.count > 0).collect();
    let bucket_text: Vec<String> = populated.iter().map(|b| format!("{} {:.3} (n={})", b.bucket, b.means.dice, b.count)).collect();
    let pass = steps <= 2000
        && secs <= 900.0
        && m.dice >= 0.85
        && m.iou >= 0.75
        && populated.iter().all(|b| b.means.dice >= 0.75);
    let outcome = outcome(
        pass,
        format!("{steps} steps in {secs:.0} s; mDice {:.4}, mIoU {:.4}; buckets {}", m.dice, m.iou, bucket_text.join(", ")),
    );

    let mut notes = Vec::new();
    let final_loss = trained.final_loss().unwrap();
    notes.push((final_loss < 0.25, format!("final training loss {final_loss:.4} (example target < 0.25)")));

    let random = root.join("random.efac");
    let net = EfaNet::new(config.model.clone()).unwrap();
    Checkpoint::capture(&config, 0, &net.init_params::<f32>(99), None).save(&random).unwrap();
    let on_train = EvalOptions { split: Some("train".into()), ..EvalOptions::default() };
    let trained_train = evaluate(&trained.checkpoint, &config.manifest, &on_train).unwrap().0.means().dice;
    let random_train = evaluate(&random, &config.manifest, &on_train).unwrap().0.means().dice;
    notes.push((
        trained_train - random_train >= 0.3,
        format!("train-split mDice trained {trained_train:.4} vs random init {random_train:.4}"),
    ));

    let bg_path = root.join("background.pgm");
    write_image(&bg_path, &synth_background(&SynthConfig::default(), 7).unwrap()).unwrap();
    let probs = predict(&trained.checkpoint, &bg_path, &root.join("background_prob.pgm"), None).unwrap();
    let mean = probs.iter().sum::<f64>() / probs.len() as f64;
    notes.push((mean < 0.2, format!("mean probability on an all-background image {mean:.4}")));
    Desk { outcome, notes }
}

fn analyzer_exactness() -> Outcome {
    let net = EfaNet::new(toy_model()).unwrap();
    let report = net.analyze(32, 32).unwrap();
    let ledger = ledger::toy_ledger();
    let (p, f) = ledger.rows.values().fold((0, 0), |(p, f), &(a, b)| (p + a, f + b));

    let conv = efanet::nn::Conv2d::new("conv", 3, 8, 3, efanet::autodiff::ConvGeom::same(3, 1));
    let mut cp = ParamStore::<f32>::new();
    conv.init(&mut cp, &mut ChaCha8Rng::seed_from_u64(0));
    let mut ctx = Ctx::costing(&cp);
    let x = ctx.input(Tensor::zeros(Shape::new(1, 3, 16, 16)));
    conv.forward(&mut ctx, x).unwrap();
    let single = ctx.into_cost_report(16, 16);

    outcome(
        report.per_module() == ledger.rows && single.total_params() == 224 && single.total_flops() == 110_592,
        format!(
            "toy: {} params / {} FLOPs (ledger {p} / {f}); single conv {} / {}",
            report.total_params(),
            report.total_flops(),
            single.total_params(),
            single.total_flops()
        ),
    )
}

fn reproducibility(root: &Path) -> Outcome {
    let data = root.join("desk");
    let mut config = RunConfig::load(&Path::new(CONFIGS).join("desk.cfg")).unwrap();
    config.manifest = data.join("manifest.tsv");
    config.optim.max_steps = 6;
    let mut logs = Vec::new();
    let mut checkpoint = None;
    for run in ["repro_a", "repro_b"] {
        config.out_dir = root.join(run);
        let t = train(&config, |_, _, _| {}).unwrap();
        logs.push(fs::read(&t.log).unwrap());
        checkpoint = Some(t.checkpoint);
    }
    let ck = checkpoint.unwrap();
    let again = root.join("again.efac");
    Checkpoint::load(&ck).unwrap().save(&again).unwrap();
    let logs_match = logs[0] == logs[1];
    let bytes_match = fs::read(&ck).unwrap() == fs::read(&again).unwrap();
    outcome(logs_match && bytes_match, format!("loss logs identical: {logs_match}; checkpoint round trip identical: {bytes_match}"))
}

#[test]
fn acceptance_criteria() {
    let dir = TempDir::new().unwrap();
    let desk = desk_training(dir.path());
    let results = [
        ("gradient suite", gradient_suite()),
        ("end-to-end gradient", end_to_end_gradient()),
        ("metric oracles", metric_oracles()),
        ("architecture contracts", architecture_contracts()),
        ("loss composition", loss_composition()),
        ("desk training", desk.outcome),
        ("analyzer exactness", analyzer_exactness()),
        ("reproducibility", reproducibility(dir.path())),
    ];
    println!();
    for (i, (name, o)) in results.iter().enumerate() {
        println!("criterion {} {name}: {} | {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    for (ok, note) in &desk.notes {
        println!("note: {} | {note}", if *ok { "met" } else { "not met" });
    }
    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
