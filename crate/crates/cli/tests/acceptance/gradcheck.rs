//! Central-finite-difference gradient checks for every differentiable op,
//! run in f64. The analytic gradient of each op must match
//! (f(x+eps) - f(x-eps)) / (2*eps) elementwise within a relative error of
//! 1e-4 (absolute floor 1 in the denominator).

use pulmo_core::nn::ConvLstmFuse;
use pulmo_core::rng::SplitMix64;
use pulmo_core::tensor::norm::BatchNormState;
use pulmo_core::tensor::ops::*;
use pulmo_core::tensor::pointwise::Mode;
use pulmo_core::tensor::{backward, Tape, Tensor};

pub const EPS: f64 = 1e-3;
pub const TOL: f64 = 1e-4;
pub const INSTANCES: usize = 100;

fn rel_err(a: f64, fd: f64) -> f64 {
    (a - fd).abs() / a.abs().max(fd.abs()).max(1.0)
}

/// Check d loss / d inputs[i] for every element of every listed input, where
/// `forward` rebuilds the loss from the shared tensor handles. Returns the
/// max relative error encountered.
pub fn check<F>(inputs: &[&Tensor<f64>], forward: F) -> f64
where
    F: Fn(&mut Tape<f64>) -> Tensor<f64>,
{
    // analytic pass
    for t in inputs {
        t.clear_grad();
    }
    let mut tape = Tape::new();
    let loss = forward(&mut tape);
    assert_eq!(loss.numel(), 1, "gradcheck loss must be scalar");
    backward(&mut tape, &loss).expect("backward");

    let mut worst = 0.0f64;
    for tensor in inputs {
        let grad = tensor
            .grad()
            .unwrap_or_else(|| panic!("missing gradient on a checked input"));
        let base = tensor.values();
        for j in 0..base.len() {
            let mut plus = base.clone();
            plus[j] += EPS;
            tensor.copy_from(&plus).unwrap();
            let mut t1 = Tape::disabled();
            let up = forward(&mut t1).item();

            let mut minus = base.clone();
            minus[j] -= EPS;
            tensor.copy_from(&minus).unwrap();
            let mut t2 = Tape::disabled();
            let down = forward(&mut t2).item();

            tensor.copy_from(&base).unwrap();
            let fd = (up - down) / (2.0 * EPS);
            worst = worst.max(rel_err(grad[j], fd));
        }
    }
    worst
}

fn rand_tensor(rng: &mut SplitMix64, dims: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = dims.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.uniform(lo, hi)).collect();
    Tensor::from_vec(dims, data).unwrap().requiring_grad()
}

/// Values kept at least 5*EPS away from zero (ReLU kink safety).
fn rand_tensor_off_kink(rng: &mut SplitMix64, dims: &[usize]) -> Tensor<f64> {
    let n: usize = dims.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let mag = rng.uniform(5.0 * EPS, 1.0);
            if rng.next_f64() < 0.5 {
                -mag
            } else {
                mag
            }
        })
        .collect();
    Tensor::from_vec(dims, data).unwrap().requiring_grad()
}

/// Random 2x2-pool input whose top-two window values are separated by more
/// than 5*EPS, so the argmax cannot flip under perturbation.
fn rand_pool_input(rng: &mut SplitMix64, n: usize, c: usize, h: usize, w: usize) -> Tensor<f64> {
    let mut data = vec![0.0f64; n * c * h * w];
    for pc in 0..n * c {
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                // four well-separated levels, randomly assigned
                let mut levels = [0.0, 0.25, 0.5, 0.75].map(|b| b + rng.uniform(0.0, 0.2));
                rng.shuffle(&mut levels);
                let mut k = 0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        data[pc * h * w + (2 * oy + dy) * w + 2 * ox + dx] = levels[k];
                        k += 1;
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, c, h, w], data).unwrap().requiring_grad()
}

/// Reduce an op output to a scalar through fixed random weights, so every
/// output element participates in the loss.
fn weighted_sum(tape: &mut Tape<f64>, out: &Tensor<f64>, rng_seed: u64) -> Tensor<f64> {
    let mut rng = SplitMix64::new(rng_seed);
    let n = out.numel();
    let weights: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let w = Tensor::from_vec(out.shape().dims(), weights).unwrap();
    let prod = mul(tape, out, &w).unwrap();
    sum_all(tape, &prod).unwrap()
}

pub struct OpReport {
    pub op: &'static str,
    pub max_rel_err: f64,
}

pub fn run_all() -> Vec<OpReport> {
    let mut reports = Vec::new();
    let mut push = |op: &'static str, err: f64| {
        assert!(
            err < TOL,
            "gradient check failed for {op}: max relative error {err:.3e} >= {TOL:.0e}"
        );
        reports.push(OpReport { op, max_rel_err: err });
    };

    // conv2d over stride/padding variants
    {
        let mut worst = 0.0f64;
        for i in 0..INSTANCES {
            let mut rng = SplitMix64::new(1000 + i as u64);
            let stride = 1 + (i % 2);
            let pad = i % 2;
            let x = rand_tensor(&mut rng, &[2, 2, 5, 5], -1.0, 1.0);
            let w = rand_tensor(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
            let b = rand_tensor(&mut rng, &[3], -0.5, 0.5);
            let err = check(&[&x, &w, &b], |tape| {
                let y = conv2d(tape, &x, &w, &b, stride, pad).unwrap();
                weighted_sum(tape, &y, 7 + i as u64)
            });
            worst = worst.max(err);
        }
        push("conv2d", worst);
    }

    // up_conv2d
    {
        let mut worst = 0.0f64;
        for i in 0..INSTANCES {
            let mut rng = SplitMix64::new(2000 + i as u64);
            let x = rand_tensor(&mut rng, &[2, 3, 3, 4], -1.0, 1.0);
            let w = rand_tensor(&mut rng, &[3, 2, 2, 2], -1.0, 1.0);
            let b = rand_tensor(&mut rng, &[2], -0.5, 0.5);
            let err = check(&[&x, &w, &b], |tape| {
                let y = up_conv2d(tape, &x, &w, &b).unwrap();
                weighted_sum(tape, &y, 11 + i as u64)
            });
            worst = worst.max(err);
        }
        push("up_conv2d", worst);
    }

    // maxpool2d
    {
        let mut worst = 0.0f64;
        for i in 0..INSTANCES {
            let mut rng = SplitMix64::new(3000 + i as u64);
            let x = rand_pool_input(&mut rng, 2, 2, 4, 6);
            let err = check(&[&x], |tape| {
                let y = maxpool2d(tape, &x).unwrap();
                weighted_sum(tape, &y, 13 + i as u64)
            });
            worst = worst.max(err);
        }
        push("maxpool2d", worst);
    }

    // activations
    for (name, kind) in [
        ("relu", Activation::Relu),
        ("sigmoid", Activation::Sigmoid),
        ("tanh", Activation::Tanh),
        ("softmax_channels", Activation::SoftmaxChannels),
    ] {
        let mut worst = 0.0f64;
        for i in 0..INSTANCES {
            let mut rng = SplitMix64::new(4000 + i as u64);
            let x = match kind {
                Activation::Relu => rand_tensor_off_kink(&mut rng, &[2, 3, 2, 2]),
                _ => rand_tensor(&mut rng, &[2, 3, 2, 2], -2.0, 2.0),
            };
            let err = check(&[&x], |tape| {
                let y = activation(tape, &x, kind).unwrap();
                weighted_sum(tape, &y, 17 + i as u64)
            });
            worst = worst.max(err);
        }
        push(name, worst);
    }

    // batchnorm2d in both modes
    for (name, mode) in [("batchnorm2d_train", Mode::Train), ("batchnorm2d_eval", Mode::Eval)] {
        let mut worst = 0.0f64;
        for i in 0..INSTANCES {
            let mut rng = SplitMix64::new(5000 + i as u64);
            let x = rand_tensor(&mut rng, &[2, 2, 3, 3], -1.5, 1.5);
            let gamma = rand_tensor(&mut rng, &[2], 0.5, 1.5);
            let beta = rand_tensor(&mut rng, &[2], -0.5, 0.5);
            let state = BatchNormState::new(2);
            let err = check(&[&x, &gamma, &beta], |tape| {
                let y = batchnorm2d(tape, &x, &gamma, &beta, &state, mode, 1e-5).unwrap();
                weighted_sum(tape, &y, 19 + i as u64)
            });
            worst = worst.max(err);
        }
        push(name, worst);
    }

    // concat / slice / flatten / gap / add / mul / sum
    {
        let mut worst = 0.0f64;
        for i in 0..INSTANCES {
            let mut rng = SplitMix64::new(6000 + i as u64);
            let a = rand_tensor(&mut rng, &[2, 2, 3, 3], -1.0, 1.0);
            let b = rand_tensor(&mut rng, &[2, 3, 3, 3], -1.0, 1.0);
            let err = check(&[&a, &b], |tape| {
                let y = concat_channels(tape, &a, &b).unwrap();
                weighted_sum(tape, &y, 23 + i as u64)
            });
            worst = worst.max(err);
        }
        push("concat_channels", worst);
    }
    {
        let mut worst = 0.0f64;
        for i in 0..INSTANCES {
            let mut rng = SplitMix64::new(6500 + i as u64);
            let x = rand_tensor(&mut rng, &[2, 4, 3, 3], -1.0, 1.0);
            let err = check(&[&x], |tape| {
                let y = slice_channels(tape, &x, 1, 3).unwrap();
                weighted_sum(tape, &y, 29 + i as u64)
            });
            worst = worst.max(err);
        }
        push("slice_channels", worst);
    }
    {
        let mut worst = 0.0f64;
        for i in 0..INSTANCES {
            let mut rng = SplitMix64::new(6700 + i as u64);
            let x = rand_tensor(&mut rng, &[2, 3, 2, 4], -1.0, 1.0);
            let err = check(&[&x], |tape| {
                let y = flatten_spatial(tape, &x).unwrap();
                weighted_sum(tape, &y, 31 + i as u64)
            });
            worst = worst.max(err);
        }
        push("flatten_spatial", worst);
    }
    {
        let mut worst = 0.0f64;
        for i in 0..INSTANCES {
            let mut rng = SplitMix64::new(6800 + i as u64);
            let x = rand_tensor(&mut rng, &[2, 3, 4, 4], -1.0, 1.0);
            let err = check(&[&x], |tape| {
                let y = global_avg_pool(tape, &x).unwrap();
                weighted_sum(tape, &y, 37 + i as u64)
            });
            worst = worst.max(err);
        }
        push("global_avg_pool", worst);
    }
    {
        let mut worst = 0.0f64;
        for i in 0..INSTANCES {
            let mut rng = SplitMix64::new(6900 + i as u64);
            let a = rand_tensor(&mut rng, &[3, 5], -1.0, 1.0);
            let b = rand_tensor(&mut rng, &[3, 5], -1.0, 1.0);
            let err = check(&[&a, &b], |tape| {
                let y = add(tape, &a, &b).unwrap();
                weighted_sum(tape, &y, 41 + i as u64)
            });
            worst = worst.max(err);
        }
        push("add", worst);
    }
    {
        let mut worst = 0.0f64;
        for i in 0..INSTANCES {
            let mut rng = SplitMix64::new(7000 + i as u64);
            let a = rand_tensor(&mut rng, &[3, 5], -1.0, 1.0);
            let b = rand_tensor(&mut rng, &[3, 5], -1.0, 1.0);
            let err = check(&[&a, &b], |tape| {
                let y = mul(tape, &a, &b).unwrap();
                weighted_sum(tape, &y, 43 + i as u64)
            });
            worst = worst.max(err);
        }
        push("mul", worst);
    }
    {
        let mut worst = 0.0f64;
        for i in 0..INSTANCES {
            let mut rng = SplitMix64::new(7100 + i as u64);
            let x = rand_tensor(&mut rng, &[4, 6], -1.0, 1.0);
            let err = check(&[&x], |tape| sum_all(tape, &x).unwrap());
            worst = worst.max(err);
        }
        push("sum_all", worst);
    }

    // dense
    {
        let mut worst = 0.0f64;
        for i in 0..INSTANCES {
            let mut rng = SplitMix64::new(7200 + i as u64);
            let x = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
            let w = rand_tensor(&mut rng, &[4, 2], -1.0, 1.0);
            let b = rand_tensor(&mut rng, &[2], -0.5, 0.5);
            let err = check(&[&x, &w, &b], |tape| {
                let y = dense(tape, &x, &w, &b).unwrap();
                weighted_sum(tape, &y, 47 + i as u64)
            });
            worst = worst.max(err);
        }
        push("dense", worst);
    }

    // dropout (train mode, fixed mask per instance via a reseeded stream)
    {
        let mut worst = 0.0f64;
        for i in 0..INSTANCES {
            let mut rng = SplitMix64::new(7300 + i as u64);
            let x = rand_tensor(&mut rng, &[3, 8], -1.0, 1.0);
            let mask_seed = 90_000 + i as u64;
            let err = check(&[&x], |tape| {
                let mut mask_rng = SplitMix64::new(mask_seed);
                let y = dropout(tape, &x, 0.3, Mode::Train, &mut mask_rng).unwrap();
                weighted_sum(tape, &y, 53 + i as u64)
            });
            worst = worst.max(err);
        }
        push("dropout", worst);
    }

    // losses
    {
        let mut worst = 0.0f64;
        for i in 0..INSTANCES {
            let mut rng = SplitMix64::new(7400 + i as u64);
            // keep clear of the clamp bounds: -ln(p) has third-derivative
            // mass there that dominates the finite-difference truncation
            let pred = rand_tensor(&mut rng, &[3, 4], 0.15, 0.85);
            let target_vals: Vec<f64> =
                (0..12).map(|_| if rng.next_f64() < 0.5 { 0.0 } else { 1.0 }).collect();
            let target = Tensor::from_vec(&[3, 4], target_vals).unwrap();
            let err = check(&[&pred], |tape| {
                loss(tape, &pred, &target, LossKind::BinaryCeOnProbabilities).unwrap()
            });
            worst = worst.max(err);
        }
        push("binary_ce", worst);
    }
    {
        let mut worst = 0.0f64;
        for i in 0..INSTANCES {
            let mut rng = SplitMix64::new(7500 + i as u64);
            let logits = rand_tensor(&mut rng, &[3, 4], -2.0, 2.0);
            let target_vals: Vec<f64> = (0..3).map(|_| rng.below(4) as f64).collect();
            let target = Tensor::from_vec(&[3], target_vals).unwrap();
            let err = check(&[&logits], |tape| {
                loss(tape, &logits, &target, LossKind::SoftmaxCeOnLogits).unwrap()
            });
            worst = worst.max(err);
        }
        push("softmax_ce", worst);
    }

    // BConvLSTM fusion (composite; spec pins a 1x2x4x4 instance)
    {
        let mut worst = 0.0f64;
        for i in 0..5 {
            let mut rng = SplitMix64::new(7600 + i as u64);
            let (layer, params) = ConvLstmFuse::<f64>::new(2, 500 + i as u64);
            let skip = rand_tensor(&mut rng, &[1, 2, 4, 4], -1.0, 1.0);
            let up = rand_tensor(&mut rng, &[1, 2, 4, 4], -1.0, 1.0);
            let mut checked: Vec<&Tensor<f64>> = vec![&skip, &up];
            checked.extend(params.iter().map(|(_, t)| t));
            let err = check(&checked, |tape| {
                let mut rng2 = SplitMix64::new(0);
                let mut fw = pulmo_core::nn::Forward::new(tape, Mode::Eval, &mut rng2);
                let y = layer.forward(&mut fw, &skip, &up).unwrap();
                weighted_sum(fw.tape, &y, 59 + i as u64)
            });
            worst = worst.max(err);
        }
        push("bconvlstm_fuse", worst);
    }

    reports
}
