//! Finite-difference checks of every primitive on random inputs.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::Result;

/// The floor keeps round-off of the central difference (about `eps * |f| / step`)
/// from failing entries whose true gradient is zero.
fn cfg() -> GradCheckConfig {
    GradCheckConfig {
        step: 1e-5,
        tolerance: 1e-5,
        abs_floor: 1e-4,
        kink_ratio: 0.5,
    }
}

/// Frame energies are quadratic in both operands, so a wide step adds no
/// truncation error and cuts round-off.
fn cfg_quadratic() -> GradCheckConfig {
    GradCheckConfig { step: 1e-3, ..cfg() }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, with random sign.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = random(rng, shape, 0.2, 2.0);
    for v in t.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// Projects an arbitrary-shaped output onto a scalar with fixed random weights.
fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(y).to_vec();
    let w = tape.constant(random(&mut rng, &shape, -1.0, 1.0));
    let p = tape.mul(y, w)?;
    tape.sum_all(p)
}

fn assert_passes(report: GradCheckReport, what: &str) {
    assert!(
        report.passed(),
        "{what}: {:?}",
        report.failures().collect::<Vec<_>>()
    );
}

fn dims(max: usize) -> impl Strategy<Value = usize> {
    1usize..=max
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn broadcast_binary_ops(a in dims(3), b in dims(4), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = away_from_zero(&mut rng, &[a, b]);
        let other = away_from_zero(&mut rng, &[a, 1]);
        for op in 0..4 {
            let o = other.clone();
            let r = grad_check(|t, x| {
                let c = t.leaf(o.clone(), true);
                let y = match op {
                    0 => t.add(x, c)?,
                    1 => t.sub(c, x)?,
                    2 => t.mul(c, x)?,
                    _ => t.div(c, x)?,
                };
                project(t, y, seed)
            }, &x, &cfg()).unwrap();
            assert_passes(r, "binary lhs");
            // gradient flowing into the broadcast operand
            let xx = x.clone();
            let r = grad_check(|t, c| {
                let x = t.constant(xx.clone());
                let y = match op {
                    0 => t.add(x, c)?,
                    1 => t.sub(c, x)?,
                    2 => t.mul(c, x)?,
                    _ => t.div(x, c)?,
                };
                project(t, y, seed)
            }, &other, &cfg()).unwrap();
            assert_passes(r, "binary broadcast operand");
        }
    }

    #[test]
    fn unary_ops(n in dims(6), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = away_from_zero(&mut rng, &[n]);
        let pos = random(&mut rng, &[n], 0.1, 3.0);
        for op in 0..9 {
            let input = if matches!(op, 3 | 7) { &pos } else { &x };
            let r = grad_check(|t, x| {
                let y = match op {
                    0 => t.relu(x)?,
                    1 => t.max_scalar(x, 0.05)?,
                    2 => t.exp(x)?,
                    3 => t.log(x)?,
                    4 => t.cos(x)?,
                    5 => t.square(x)?,
                    6 => t.mul_scalar(x, -2.5)?,
                    7 => { let e = t.scalar(1.7); t.pow(x, e)? }
                    _ => t.abs(x)?,
                };
                project(t, y, seed)
            }, input, &cfg()).unwrap();
            assert_passes(r, "unary");
        }
    }

    #[test]
    fn pow_exponent(n in dims(5), e in 0.5f64..4.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = random(&mut rng, &[n], 0.1, 2.0);
        let r = grad_check(|t, ev| {
            let b = t.constant(base.clone());
            let y = t.pow(b, ev)?;
            project(t, y, seed)
        }, &Tensor::scalar(e), &cfg()).unwrap();
        assert_passes(r, "pow exponent");
    }

    #[test]
    fn matmul_both_sides(m in dims(4), k in dims(4), n in dims(4), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[m, k], -1.0, 1.0);
        let b = random(&mut rng, &[k, n], -1.0, 1.0);
        let bb = b.clone();
        assert_passes(grad_check(|t, a| {
            let b = t.constant(bb.clone());
            let y = t.matmul(a, b)?;
            project(t, y, seed)
        }, &a, &cfg()).unwrap(), "matmul lhs");
        assert_passes(grad_check(|t, b| {
            let a = t.constant(a.clone());
            let y = t.matmul(a, b)?;
            project(t, y, seed)
        }, &b, &cfg()).unwrap(), "matmul rhs");
    }

    #[test]
    fn reductions_and_slicing(a in dims(3), b in dims(4), c in dims(3), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[a, b, c], -1.0, 1.0);
        assert_passes(grad_check(|t, x| {
            let s = t.sum_axes(x, &[1], false)?;
            let m = t.mean_axes(x, &[0, 2], true)?;
            let ps = project(t, s, seed)?;
            let pm = project(t, m, seed + 1)?;
            t.add(ps, pm)
        }, &x, &cfg()).unwrap(), "reduce");
        assert_passes(grad_check(|t, x| {
            let head = t.slice(x, 1, 0, 1)?;
            let cat = t.concat(&[x, head], 1)?;
            let r = t.reshape(cat, &[a * (b + 1) * c])?;
            project(t, r, seed)
        }, &x, &cfg()).unwrap(), "slice/concat/reshape");
    }

    #[test]
    fn batch_norm_modes(b in 2usize..5, ch in dims(3), w in dims(4), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[b, ch, w], -2.0, 2.0);
        assert_passes(grad_check(|t, x| {
            let mut st = BatchNormState::new(ch);
            let y = t.batch_norm(x, 1, &mut st, NormMode::Train)?;
            project(t, y, seed)
        }, &x, &cfg()).unwrap(), "batchnorm train");
        let mut warm = BatchNormState::new(ch);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        tape.batch_norm(xv, 1, &mut warm, NormMode::Train).unwrap();
        assert_passes(grad_check(|t, x| {
            let mut st = warm.clone();
            let y = t.batch_norm(x, 1, &mut st, NormMode::Eval)?;
            project(t, y, seed)
        }, &x, &cfg()).unwrap(), "batchnorm eval");
    }

    #[test]
    fn softmax_cross_entropy_grad(b in dims(4), c in 2usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = random(&mut rng, &[b, c], -3.0, 3.0);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
        assert_passes(grad_check(|t, z| t.softmax_cross_entropy(z, &labels), &z, &cfg()).unwrap(), "xent");
    }

    #[test]
    fn conv2d_and_pooling(cin in dims(2), cout in dims(3), h in 3usize..7, w in 3usize..7, d in 1usize..3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[2, cin, h, w], -1.0, 1.0);
        let k = random(&mut rng, &[cout, cin, 3, 3], -1.0, 1.0);
        let kk = k.clone();
        assert_passes(grad_check(|t, x| {
            let k = t.constant(kk.clone());
            let y = t.conv2d(x, k, d)?;
            let p = t.avg_pool2d(y, 2, 3)?;
            project(t, p, seed)
        }, &x, &cfg()).unwrap(), "conv2d input");
        assert_passes(grad_check(|t, k| {
            let x = t.constant(x.clone());
            let y = t.conv2d(x, k, d)?;
            project(t, y, seed)
        }, &k, &cfg()).unwrap(), "conv2d weight");
    }

    #[test]
    fn row_max_abs_grad(r in dims(3), c in dims(5), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // distinct magnitudes keep the argmax stable under the probe step
        let mut vals: Vec<f64> = (0..r * c).map(|i| 0.3 + 0.1 * i as f64).collect();
        for v in vals.iter_mut() {
            if rng.random_bool(0.5) { *v = -*v; }
        }
        let x = Tensor::new(vec![r, c], vals).unwrap();
        assert_passes(grad_check(|t, x| {
            let m = t.row_max_abs(x)?;
            let y = t.div(x, m)?;
            project(t, y, seed)
        }, &x, &cfg()).unwrap(), "row_max_abs");
    }

    #[test]
    fn conv1d_and_frame_energy(l in 24usize..40, lk in 2usize..7, k in dims(2), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[2, l], -1.0, 1.0);
        let g = random(&mut rng, &[k, lk], -1.0, 1.0);
        for mode in [ConvMode::Same, ConvMode::Causal, ConvMode::Valid] {
            let gg = g.clone();
            assert_passes(grad_check(|t, x| {
                let g = t.constant(gg.clone());
                let y = t.conv1d(x, g, mode)?;
                project(t, y, seed)
            }, &x, &cfg()).unwrap(), "conv1d input");
            let xx = x.clone();
            assert_passes(grad_check(|t, g| {
                let x = t.constant(xx.clone());
                let y = t.conv1d(x, g, mode)?;
                project(t, y, seed)
            }, &g, &cfg()).unwrap(), "conv1d kernels");
        }
        let hann = crate::dsp::Window::Hann.coefficients(8);
        for spec in [
            FrameEnergySpec::rectangular(8, 4),
            FrameEnergySpec { frame_len: 8, hop: 4, window: hann, max_pool: false },
            FrameEnergySpec { frame_len: 8, hop: 4, window: vec![1.0; 8], max_pool: true },
        ] {
            // max pooling is only piecewise quadratic; its FFT-synthesized objective
            // carries round-off near 1e-9 on entries whose true gradient is zero
            let fd = if spec.max_pool {
                GradCheckConfig { abs_floor: 1e-3, ..cfg() }
            } else {
                cfg_quadratic()
            };
            for mode in [ConvMode::Same, ConvMode::Causal] {
                let xx = x.clone();
                assert_passes(grad_check(|t, g| {
                    let x = t.constant(xx.clone());
                    let e = t.conv_frame_energy(x, g, mode, &spec)?;
                    project(t, e, seed)
                }, &g, &fd).unwrap(), "fused kernels");
                let gg = g.clone();
                assert_passes(grad_check(|t, x| {
                    let g = t.constant(gg.clone());
                    let e = t.conv_frame_energy(x, g, mode, &spec)?;
                    project(t, e, seed)
                }, &x, &fd).unwrap(), "fused input");
            }
            assert_passes(grad_check(|t, x| {
                let y = t.reshape(x, &[1, 2, l])?;
                let e = t.frame_energy(y, &spec)?;
                project(t, e, seed)
            }, &x, &fd).unwrap(), "frame energy");
        }
    }

    #[test]
    fn adjoints_are_linear(n in dims(5), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[n], 0.1, 2.0);
        let losses = |t: &mut Tape, v: Var, which: u8| -> Result<Var> {
            let a = { let y = t.log(v)?; project(t, y, seed)? };
            let b = { let y = t.square(v)?; project(t, y, seed + 7)? };
            match which { 0 => Ok(a), 1 => Ok(b), _ => t.add(a, b) }
        };
        let grad_of = |which: u8| {
            let mut t = Tape::new();
            let v = t.leaf(x.clone(), true);
            let l = losses(&mut t, v, which).unwrap();
            t.backward(l).unwrap();
            t.grad(v).unwrap().data().to_vec()
        };
        let (ga, gb, gs) = (grad_of(0), grad_of(1), grad_of(2));
        for i in 0..n {
            prop_assert!((ga[i] + gb[i] - gs[i]).abs() <= 1e-12 * (1.0 + gs[i].abs()));
        }
    }
}

#[test]
fn quadratic_form_gradient() {
    let mut t = Tape::new();
    let w = t.leaf(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(), true);
    let sq = t.mul(w, w).unwrap();
    let l = t.sum_all(sq).unwrap();
    t.backward(l).unwrap();
    assert_eq!(t.grad(w).unwrap().data(), &[2.0, 0.0, 0.0, 2.0]);
}

#[test]
fn backward_twice_is_an_error() {
    let mut t = Tape::new();
    let w = t.leaf(Tensor::scalar(1.0), true);
    let l = t.square(w).unwrap();
    t.backward(l).unwrap();
    assert!(matches!(t.backward(l), Err(crate::Error::BackwardTwice)));
}

#[test]
fn frozen_inputs_get_no_gradient() {
    let mut t = Tape::new();
    let a = t.leaf(Tensor::scalar(2.0), true);
    let b = t.constant(Tensor::scalar(3.0));
    let y = t.mul(a, b).unwrap();
    t.backward(y).unwrap();
    assert!(t.grad(b).is_none());
    assert_eq!(t.grad(a).unwrap().item(), 3.0);
}

#[test]
fn finite_checks_catch_nan() {
    let mut t = Tape::with_finite_checks();
    let a = t.constant(Tensor::scalar(-1.0));
    assert!(matches!(t.log(a), Err(crate::Error::NonFinite("log"))));
}
