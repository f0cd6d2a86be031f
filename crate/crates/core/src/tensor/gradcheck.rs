//! Finite-difference verification of every catalog op.
//!
//! Runs in f64 against central differences with h = 1e-5 and reports the
//! worst relative error per op over several random shapes. The relative
//! error uses a guarded denominator so near-zero gradients are judged on
//! an absolute scale.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Pass bar for the whole suite.
pub const TOLERANCE: f64 = 1e-4;
const FD_H: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct OpReport {
    pub op: &'static str,
    pub cases: usize,
    pub max_rel_err: f64,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Random tensor whose entries stay away from an activation kink at 0.
fn rand_tensor_off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let mut t = rand_tensor(rng, shape);
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v = 0.05 + rng.gen_range(0.0..0.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            if v.abs() < 0.05 {
                *v = 0.1;
            }
        }
    }
    t
}

/// Checks analytic gradients of `build`'s output w.r.t. every element of
/// every input, using a fixed random projection to scalarize the output.
fn check_case<F>(rng: &mut ChaCha8Rng, inputs: &[Tensor<f64>], build: F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    // random projection weights, fixed across all perturbations
    let probe = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| g.input(t.clone()))
            .collect::<Result<_>>()?;
        let out = build(&mut g, &vars)?;
        rand_tensor(rng, g.shape(out))
    };

    let eval = |tensors: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = tensors
            .iter()
            .map(|t| g.input(t.clone()))
            .collect::<Result<_>>()?;
        let out = build(&mut g, &vars)?;
        let w = g.constant(probe.clone())?;
        let prod = g.mul(out, w)?;
        let loss = g.sum(prod)?;
        g.scalar_value(loss)
    };

    // analytic gradients
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.input(t.clone().with_grad()))
        .collect::<Result<_>>()?;
    let out = build(&mut g, &vars)?;
    let w = g.constant(probe.clone())?;
    let prod = g.mul(out, w)?;
    let loss = g.sum(prod)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for ti in 0..inputs.len() {
        for j in 0..inputs[ti].numel() {
            let orig = work[ti].data()[j];
            work[ti].data_mut()[j] = orig + FD_H;
            let up = eval(&work)?;
            work[ti].data_mut()[j] = orig - FD_H;
            let down = eval(&work)?;
            work[ti].data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * FD_H);
            worst = worst.max(rel_err(analytic[ti].data()[j], fd));
        }
    }
    Ok(worst)
}

fn report<F>(
    rng: &mut ChaCha8Rng,
    op: &'static str,
    cases: Vec<(Vec<Tensor<f64>>, F)>,
) -> Result<OpReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut max_rel = 0.0f64;
    let n = cases.len();
    for (inputs, build) in cases {
        max_rel = max_rel.max(check_case(rng, &inputs, build)?);
    }
    Ok(OpReport { op, cases: n, max_rel_err: max_rel })
}

type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

/// Run the finite-difference suite over the whole op catalog.
pub fn run_suite(seed: u64) -> Result<Vec<OpReport>> {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();

    // conv2d: (n, cin, h, w, cout, k, stride, pad, bias)
    let conv_geoms = [
        (2, 3, 8, 8, 4, 3, 2, 1, true),
        (1, 2, 5, 5, 3, 3, 1, 1, false),
        (2, 1, 7, 6, 2, 4, 2, 1, true),
        (1, 4, 6, 6, 2, 1, 1, 0, false),
        (2, 2, 9, 9, 3, 5, 3, 2, true),
    ];
    let cases: Vec<(Vec<Tensor<f64>>, Build)> = conv_geoms
        .iter()
        .map(|&(n, cin, h, w, cout, k, s, p, bias)| {
            let mut inputs = vec![
                rand_tensor(rng, &[n, cin, h, w]),
                rand_tensor(rng, &[cout, cin, k, k]),
            ];
            if bias {
                inputs.push(rand_tensor(rng, &[cout]));
            }
            let build: Build = Box::new(move |g, v| {
                g.conv2d(v[0], v[1], if bias { Some(v[2]) } else { None }, s, p)
            });
            (inputs, build)
        })
        .collect();
    reports.push(report(rng, "conv2d", cases)?);

    // conv_transpose2d: (n, cin, h, w, cout, k, stride, pad, bias)
    let tconv_geoms = [
        (2, 3, 4, 4, 2, 4, 2, 1, true),
        (1, 2, 3, 3, 4, 3, 1, 1, false),
        (2, 4, 5, 5, 1, 2, 2, 0, true),
        (1, 1, 6, 5, 2, 4, 2, 1, false),
        (2, 2, 3, 4, 3, 5, 3, 2, true),
    ];
    let cases: Vec<(Vec<Tensor<f64>>, Build)> = tconv_geoms
        .iter()
        .map(|&(n, cin, h, w, cout, k, s, p, bias)| {
            let mut inputs = vec![
                rand_tensor(rng, &[n, cin, h, w]),
                rand_tensor(rng, &[cin, cout, k, k]),
            ];
            if bias {
                inputs.push(rand_tensor(rng, &[cout]));
            }
            let build: Build = Box::new(move |g, v| {
                g.conv_transpose2d(v[0], v[1], if bias { Some(v[2]) } else { None }, s, p)
            });
            (inputs, build)
        })
        .collect();
    reports.push(report(rng, "conv_transpose2d", cases)?);

    // linear
    let lin_geoms = [(4, 7, 3, true), (1, 5, 2, false), (6, 3, 8, true), (2, 9, 4, false), (3, 6, 6, true)];
    let cases: Vec<(Vec<Tensor<f64>>, Build)> = lin_geoms
        .iter()
        .map(|&(n, f, o, bias)| {
            let mut inputs = vec![rand_tensor(rng, &[n, f]), rand_tensor(rng, &[o, f])];
            if bias {
                inputs.push(rand_tensor(rng, &[o]));
            }
            let build: Build =
                Box::new(move |g, v| g.linear(v[0], v[1], if bias { Some(v[2]) } else { None }));
            (inputs, build)
        })
        .collect();
    reports.push(report(rng, "linear", cases)?);

    // instance_norm over x, gamma, beta
    let in_geoms = [(2, 3, 5, 4), (1, 2, 6, 6), (3, 1, 4, 4), (2, 4, 3, 5), (1, 3, 7, 2)];
    let cases: Vec<(Vec<Tensor<f64>>, Build)> = in_geoms
        .iter()
        .map(|&(n, c, h, w)| {
            let inputs = vec![
                rand_tensor(rng, &[n, c, h, w]),
                rand_tensor(rng, &[c]),
                rand_tensor(rng, &[c]),
            ];
            let build: Build = Box::new(move |g, v| g.instance_norm(v[0], v[1], v[2], 1e-5));
            (inputs, build)
        })
        .collect();
    reports.push(report(rng, "instance_norm", cases)?);

    let elem_shapes: [Vec<usize>; 5] =
        [vec![3, 4], vec![2, 3, 4], vec![7], vec![1, 2, 3, 4], vec![5, 5]];

    // kinked unaries: inputs kept away from 0
    for (name, f) in [
        ("relu", Box::new(|g: &mut Graph<f64>, v: &[Var]| g.relu(v[0])) as Build),
        ("leaky_relu", Box::new(|g: &mut Graph<f64>, v: &[Var]| g.leaky_relu(v[0], 0.01)) as Build),
        ("abs", Box::new(|g: &mut Graph<f64>, v: &[Var]| g.abs(v[0])) as Build),
    ] {
        let mut max_rel = 0.0f64;
        for shape in &elem_shapes {
            let inputs = vec![rand_tensor_off_kink(rng, shape)];
            max_rel = max_rel.max(check_case(rng, &inputs, &f)?);
        }
        reports.push(OpReport { op: name, cases: elem_shapes.len(), max_rel_err: max_rel });
    }

    // smooth unaries
    for (name, f) in [
        ("tanh", Box::new(|g: &mut Graph<f64>, v: &[Var]| g.tanh(v[0])) as Build),
        ("neg", Box::new(|g: &mut Graph<f64>, v: &[Var]| g.neg(v[0])) as Build),
        ("mean", Box::new(|g: &mut Graph<f64>, v: &[Var]| g.mean(v[0])) as Build),
        ("sum", Box::new(|g: &mut Graph<f64>, v: &[Var]| g.sum(v[0])) as Build),
        ("per_sample_sum", Box::new(|g: &mut Graph<f64>, v: &[Var]| g.per_sample_sum(v[0])) as Build),
        ("scale_const", Box::new(|g: &mut Graph<f64>, v: &[Var]| g.scale(v[0], -1.7)) as Build),
        ("add_const", Box::new(|g: &mut Graph<f64>, v: &[Var]| g.offset(v[0], 0.37)) as Build),
    ] {
        let mut max_rel = 0.0f64;
        for shape in &elem_shapes {
            let inputs = vec![rand_tensor(rng, shape)];
            max_rel = max_rel.max(check_case(rng, &inputs, &f)?);
        }
        reports.push(OpReport { op: name, cases: elem_shapes.len(), max_rel_err: max_rel });
    }

    // binary same-shape
    for (name, f) in [
        ("add", Box::new(|g: &mut Graph<f64>, v: &[Var]| g.add(v[0], v[1])) as Build),
        ("mul", Box::new(|g: &mut Graph<f64>, v: &[Var]| g.mul(v[0], v[1])) as Build),
    ] {
        let mut max_rel = 0.0f64;
        for shape in &elem_shapes {
            let inputs = vec![rand_tensor(rng, shape), rand_tensor(rng, shape)];
            max_rel = max_rel.max(check_case(rng, &inputs, &f)?);
        }
        reports.push(OpReport { op: name, cases: elem_shapes.len(), max_rel_err: max_rel });
    }

    // concat_channels
    let cc_geoms = [(2, 3, 2, 4, 4), (1, 1, 4, 3, 3), (2, 2, 2, 5, 2), (1, 4, 1, 2, 6), (3, 2, 3, 3, 3)];
    let cases: Vec<(Vec<Tensor<f64>>, Build)> = cc_geoms
        .iter()
        .map(|&(n, c1, c2, h, w)| {
            let inputs = vec![rand_tensor(rng, &[n, c1, h, w]), rand_tensor(rng, &[n, c2, h, w])];
            let build: Build = Box::new(|g, v| g.concat_channels(v[0], v[1]));
            (inputs, build)
        })
        .collect();
    reports.push(report(rng, "concat_channels", cases)?);

    // tile_label
    let tl_geoms = [(2, 3, 4, 5), (1, 2, 3, 3), (4, 4, 2, 2), (2, 5, 1, 6), (3, 2, 5, 4)];
    let cases: Vec<(Vec<Tensor<f64>>, Build)> = tl_geoms
        .iter()
        .map(|&(n, k, h, w)| {
            let inputs = vec![rand_tensor(rng, &[n, k])];
            let build: Build = Box::new(move |g, v| g.tile_label(v[0], h, w));
            (inputs, build)
        })
        .collect();
    reports.push(report(rng, "tile_label", cases)?);

    // interpolate_pair
    let ip_shapes: [Vec<usize>; 5] =
        [vec![2, 3, 4, 4], vec![3, 5], vec![1, 2, 2, 2], vec![4, 3], vec![2, 6]];
    let cases: Vec<(Vec<Tensor<f64>>, Build)> = ip_shapes
        .iter()
        .map(|shape| {
            let n = shape[0];
            let u: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..0.9)).collect();
            let inputs = vec![rand_tensor(rng, shape), rand_tensor(rng, shape)];
            let build: Build = Box::new(move |g, v| g.interpolate_pair(v[0], v[1], &u));
            (inputs, build)
        })
        .collect();
    reports.push(report(rng, "interpolate_pair", cases)?);

    // reshape
    let rs_geoms: [(Vec<usize>, Vec<usize>); 5] = [
        (vec![2, 3, 4], vec![4, 6]),
        (vec![6], vec![2, 3]),
        (vec![2, 2, 2, 2], vec![16]),
        (vec![3, 4], vec![2, 6]),
        (vec![5, 2], vec![10]),
    ];
    let cases: Vec<(Vec<Tensor<f64>>, Build)> = rs_geoms
        .iter()
        .map(|(from, to)| {
            let inputs = vec![rand_tensor(rng, from)];
            let to = to.clone();
            let build: Build = Box::new(move |g, v| g.reshape(v[0], &to));
            (inputs, build)
        })
        .collect();
    reports.push(report(rng, "reshape", cases)?);

    // bce_with_logits
    let bce_geoms = [(3, 4), (1, 2), (5, 1), (2, 6), (4, 4)];
    let cases: Vec<(Vec<Tensor<f64>>, Build)> = bce_geoms
        .iter()
        .map(|&(n, k)| {
            let mut logits = rand_tensor(rng, &[n, k]);
            for v in logits.data_mut() {
                *v *= 3.0;
            }
            let targets = Tensor::new(
                vec![n, k],
                (0..n * k).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect(),
            )
            .unwrap();
            let inputs = vec![logits];
            let build: Build = Box::new(move |g, v| g.bce_with_logits(v[0], &targets));
            (inputs, build)
        })
        .collect();
    reports.push(report(rng, "bce_with_logits", cases)?);

    // softmax_cross_entropy
    let sce_geoms = [(3, 5), (1, 2), (4, 3), (2, 7), (6, 4)];
    let cases: Vec<(Vec<Tensor<f64>>, Build)> = sce_geoms
        .iter()
        .map(|&(n, k)| {
            let mut logits = rand_tensor(rng, &[n, k]);
            for v in logits.data_mut() {
                *v *= 2.0;
            }
            let mut tdata = vec![0.0; n * k];
            for row in 0..n {
                tdata[row * k + rng.gen_range(0..k)] = 1.0;
            }
            let targets = Tensor::new(vec![n, k], tdata).unwrap();
            let inputs = vec![logits];
            let build: Build = Box::new(move |g, v| g.softmax_cross_entropy(v[0], &targets));
            (inputs, build)
        })
        .collect();
    reports.push(report(rng, "softmax_cross_entropy", cases)?);

    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_suite_passes() {
        let reports = run_suite(0xC0FFEE).unwrap();
        assert!(reports.len() >= 20, "expected every catalog op covered, got {}", reports.len());
        for r in &reports {
            assert!(r.cases >= 5, "{}: only {} cases", r.op, r.cases);
            assert!(r.passed(), "{} failed: max rel err {:.3e}", r.op, r.max_rel_err);
        }
    }
}
