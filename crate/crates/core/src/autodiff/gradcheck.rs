//! Finite-difference verification of tape gradients.
//!
//! A case builds a scalar from its input leaves. Non-scalar op outputs are
//! reduced with a fixed random projection `Σ out ⊙ R` so every output element
//! contributes to the checked gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Shape, Tensor};

use super::{ConvGeom, Mode, Tape, Var};

pub type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Send + Sync>;

pub struct GradCase {
    pub name: String,
    pub inputs: Vec<Tensor<f64>>,
    pub build: Build,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
}

/// Denominator floor so that near-zero gradients compare absolutely.
pub const REL_FLOOR: f64 = 1e-2;

fn evaluate(build: &Build, inputs: &[Tensor<f64>]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    Ok(tape.value(out).data()[0])
}

/// Max over all input elements of `|g − ĝ| / max(|g|, |ĝ|, REL_FLOOR)` where
/// `ĝ` is the central difference with step `h`.
pub fn check(case: &GradCase, h: f64) -> Result<GradReport> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = (case.build)(&mut tape, &vars)?;
    tape.backward(out)?;
    let mut max_rel_err = 0.0f64;
    let mut checked = 0;
    let mut probe = case.inputs.clone();
    for (k, &v) in vars.iter().enumerate() {
        let analytic = tape.grad(v).unwrap_or_else(|| Tensor::zeros(case.inputs[k].shape()));
        for i in 0..case.inputs[k].numel() {
            let x0 = case.inputs[k].data()[i];
            probe[k].data_mut()[i] = x0 + h;
            let fp = evaluate(&case.build, &probe)?;
            probe[k].data_mut()[i] = x0 - h;
            let fm = evaluate(&case.build, &probe)?;
            probe[k].data_mut()[i] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            max_rel_err = max_rel_err.max(err);
            checked += 1;
        }
    }
    Ok(GradReport { name: case.name.clone(), checked, max_rel_err })
}

fn random(rng: &mut ChaCha8Rng, shape: Shape, scale: f64) -> Tensor<f64> {
    Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// Values bounded away from zero so ReLU kinks stay out of the difference stencil.
fn off_zero(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    let data = (0..shape.numel()).map(|_| {
        let m: f64 = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) { m } else { -m }
    });
    Tensor::from_vec(shape, data.collect()).unwrap()
}

fn binary(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_vec(shape, (0..shape.numel()).map(|_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 }).collect()).unwrap()
}

/// `Σ out ⊙ R` with a fixed random `R`.
fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = tape.constant(random(&mut rng, tape.shape(out), 1.0));
    let p = tape.mul(out, r)?;
    Ok(tape.sum(p))
}

fn case(name: &str, inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Send + Sync + 'static) -> GradCase {
    GradCase { name: name.to_string(), inputs, build: Box::new(build) }
}

fn bn(tape: &mut Tape<f64>, x: Var, g: Var, b: Var, mode: Mode) -> Result<Var> {
    let c = tape.shape(x).c;
    let rm: Vec<f64> = (0..c).map(|i| 0.1 * i as f64).collect();
    let rv: Vec<f64> = (0..c).map(|i| 0.5 + 0.25 * i as f64).collect();
    Ok(tape.batch_norm(x, g, b, &rm, &rv, mode)?.0)
}

/// One case per differentiable op (and its main variants).
pub fn op_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = |n, c, h, w| Shape::new(n, c, h, w);
    let mut cases = Vec::new();
    for (name, geom, k) in [
        ("conv2d 3x3 pad 1", ConvGeom::new(1, 1, 1), 3),
        ("conv2d 3x3 stride 2", ConvGeom::new(2, 1, 1), 3),
        ("conv2d 3x3 dilation 2", ConvGeom::new(1, 2, 2), 3),
        ("conv2d 1x1", ConvGeom::new(1, 0, 1), 1),
    ] {
        let inputs = vec![random(&mut rng, s(2, 3, 6, 6), 1.0), random(&mut rng, s(4, 3, k, k), 0.5), random(&mut rng, s(1, 4, 1, 1), 0.5)];
        cases.push(case(name, inputs, move |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), geom)?;
            project(t, y, 1)
        }));
    }
    for mode in [Mode::Train, Mode::Eval] {
        let inputs = vec![random(&mut rng, s(3, 2, 3, 3), 1.0), random(&mut rng, s(1, 2, 1, 1), 1.0), random(&mut rng, s(1, 2, 1, 1), 1.0)];
        cases.push(case(&format!("batch_norm {mode:?}"), inputs, move |t, v| {
            let y = bn(t, v[0], v[1], v[2], mode)?;
            project(t, y, 2)
        }));
    }
    cases.push(case("relu", vec![off_zero(&mut rng, s(2, 2, 3, 3))], |t, v| {
        let y = t.relu(v[0]);
        project(t, y, 3)
    }));
    cases.push(case("sigmoid", vec![random(&mut rng, s(2, 2, 3, 3), 3.0)], |t, v| {
        let y = t.sigmoid(v[0]);
        project(t, y, 4)
    }));
    for (name, oh, ow, align) in [
        ("resize up align", 7, 9, true),
        ("resize down align", 3, 2, true),
        ("resize up half-pixel", 8, 6, false),
        ("resize down half-pixel", 2, 3, false),
    ] {
        cases.push(case(name, vec![random(&mut rng, s(2, 2, 4, 5), 1.0)], move |t, v| {
            let y = t.resize_bilinear(v[0], oh, ow, align)?;
            project(t, y, 5)
        }));
    }
    cases.push(case("concat", vec![random(&mut rng, s(2, 1, 3, 3), 1.0), random(&mut rng, s(2, 3, 3, 3), 1.0)], |t, v| {
        let y = t.concat_channels(&[v[0], v[1], v[0]])?;
        project(t, y, 6)
    }));
    for (name, bs) in [("add", s(2, 3, 3, 4)), ("add broadcast channel", s(2, 3, 1, 1)), ("add broadcast spatial", s(2, 1, 3, 4))] {
        cases.push(case(name, vec![random(&mut rng, s(2, 3, 3, 4), 1.0), random(&mut rng, bs, 1.0)], |t, v| {
            let y = t.add(v[0], v[1])?;
            project(t, y, 7)
        }));
    }
    for (name, bs) in [("mul", s(2, 3, 3, 4)), ("mul broadcast channel", s(2, 3, 1, 1)), ("mul broadcast spatial", s(2, 1, 3, 4))] {
        cases.push(case(name, vec![random(&mut rng, s(2, 3, 3, 4), 1.0), random(&mut rng, bs, 1.0)], |t, v| {
            let y = t.mul(v[0], v[1])?;
            project(t, y, 8)
        }));
    }
    cases.push(case("global_avg_pool", vec![random(&mut rng, s(2, 3, 4, 3), 1.0)], |t, v| {
        let y = t.global_avg_pool(v[0])?;
        project(t, y, 9)
    }));
    cases.push(case("scale", vec![random(&mut rng, s(1, 2, 3, 3), 1.0)], |t, v| {
        let y = t.scale(v[0], -2.5);
        project(t, y, 10)
    }));
    cases.push(case("sum", vec![random(&mut rng, s(2, 2, 2, 2), 1.0)], |t, v| Ok(t.sum(v[0]))));
    for weighted in [false, true] {
        let target = binary(&mut rng, s(2, 1, 4, 4));
        let weight = weighted.then(|| Tensor::from_vec(s(2, 1, 4, 4), (0..32).map(|_| rng.gen_range(1.0..6.0)).collect()).unwrap());
        let (t1, w1) = (target.clone(), weight.clone());
        cases.push(case(&format!("bce_with_logits weighted={weighted}"), vec![random(&mut rng, s(2, 1, 4, 4), 3.0)], move |t, v| {
            t.bce_with_logits(v[0], t1.clone(), w1.clone())
        }));
        cases.push(case(&format!("soft_iou weighted={weighted}"), vec![random(&mut rng, s(2, 1, 4, 4), 3.0)], move |t, v| {
            t.soft_iou(v[0], target.clone(), weight.clone())
        }));
    }
    cases
}

/// Three composite graphs mixing the ops the network uses.
pub fn composite_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = |n, c, h, w| Shape::new(n, c, h, w);
    let mut cases = Vec::new();

    // conv -> BN -> ReLU -> dilated conv, gated by a GAP attention branch
    let inputs = vec![
        random(&mut rng, s(2, 2, 6, 6), 1.0),
        random(&mut rng, s(3, 2, 3, 3), 0.6),
        random(&mut rng, s(1, 3, 1, 1), 0.3),
        random(&mut rng, s(1, 3, 1, 1), 1.0),
        random(&mut rng, s(1, 3, 1, 1), 1.0),
        random(&mut rng, s(3, 3, 3, 3), 0.4),
        random(&mut rng, s(3, 3, 1, 1), 0.5),
    ];
    cases.push(case("composite conv-bn-relu-attention", inputs, |t, v| {
        let y = t.conv2d(v[0], v[1], Some(v[2]), ConvGeom::new(1, 1, 1))?;
        let y = bn(t, y, v[3], v[4], Mode::Train)?;
        let y = t.relu(y);
        let z = t.conv2d(y, v[5], None, ConvGeom::new(1, 2, 2))?;
        let g = t.global_avg_pool(z)?;
        let a = t.conv2d(g, v[6], None, ConvGeom::new(1, 0, 1))?;
        let a = t.sigmoid(a);
        let w = t.mul(z, a)?;
        let out = t.add(w, z)?;
        project(t, out, 11)
    }));

    // two scales: downsampled branch upsampled back, concatenated, fused, BCE
    let target = binary(&mut rng, s(2, 1, 8, 8));
    let inputs = vec![random(&mut rng, s(2, 2, 8, 8), 1.0), random(&mut rng, s(2, 2, 3, 3), 0.5), random(&mut rng, s(1, 4, 1, 1), 0.5)];
    cases.push(case("composite multiscale-concat-bce", inputs, move |t, v| {
        let lo = t.conv2d(v[0], v[1], None, ConvGeom::new(2, 1, 1))?;
        let up = t.resize_bilinear(lo, 8, 8, true)?;
        let cat = t.concat_channels(&[v[0], up])?;
        let w = t.scale(v[2], 1.0);
        let w = t.resize_bilinear(w, 1, 1, true)?;
        let logits = t.conv2d(cat, w, None, ConvGeom::new(1, 0, 1))?;
        t.bce_with_logits(logits, target.clone(), None)
    }));

    // edge-weighted side output with a weighted BCE + soft IoU objective
    let target = binary(&mut rng, s(1, 1, 8, 8));
    let weight = Tensor::from_vec(s(1, 1, 8, 8), (0..64).map(|_| rng.gen_range(1.0..6.0)).collect()).unwrap();
    let inputs = vec![
        random(&mut rng, s(1, 3, 4, 4), 1.0),
        random(&mut rng, s(1, 3, 2, 2), 1.0),
        random(&mut rng, s(1, 3, 1, 1), 0.7),
        random(&mut rng, s(1, 3, 3, 3), 0.4),
    ];
    cases.push(case("composite edge-weighted-deep-supervision", inputs, move |t, v| {
        let e = t.conv2d(v[1], v[2], None, ConvGeom::new(1, 0, 1))?;
        let a = t.sigmoid(e);
        let a = t.resize_bilinear(a, 4, 4, true)?;
        let f = t.mul(v[0], a)?;
        let f = t.add(f, v[0])?;
        let logits = t.conv2d(f, v[3], None, ConvGeom::new(1, 1, 1))?;
        let logits = t.resize_bilinear(logits, 8, 8, true)?;
        let bce = t.bce_with_logits(logits, target.clone(), Some(weight.clone()))?;
        let iou = t.soft_iou(logits, target.clone(), Some(weight.clone()))?;
        t.add(bce, iou)
    }));
    cases
}
