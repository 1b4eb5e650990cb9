//! Oracles shared by the integration tests: finite-difference gradients,
//! closed-form statistics and a direct-DFT mel spectrogram.
#![allow(dead_code)]

use audiopred::autodiff::{Tape, Var};
use audiopred::model::{ModelConfig, PredNetModel};
use audiopred::tensor::Tensor;
use audiopred::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values at least `gap` away from zero, so kinks are out of finite-difference reach.
pub fn random_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    random(rng, shape).map(|v| match v {
        v if v.abs() >= gap => v,
        v if v >= 0.0 => v + gap,
        v => v - gap,
    })
}

/// Distinct values on a shuffled grid so pooling windows never tie.
pub fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 / n as f64 - 0.5).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    Tensor::new(shape.to_vec(), vals).unwrap()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

type Build = dyn Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>;

fn projected_loss(inputs: &[Tensor<f64>], proj_seed: u64, build: &Build, want_grads: bool) -> (f64, Vec<Tensor<f64>>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = build(&mut tape, &vars).unwrap();
    let shape = tape.value(out).shape().to_vec();
    let r = tape.constant(random(&mut rng(proj_seed), &shape));
    let prod = tape.mul(out, r).unwrap();
    let loss = tape.mean(prod);
    let value = tape.value(loss).item();
    if !want_grads {
        return (value, Vec::new());
    }
    let mut g = tape.backward(loss).unwrap();
    (value, vars.iter().map(|&v| g.take_or_zero(v)).collect())
}

/// Largest per-input relative error between analytic and central-difference
/// gradients of `mean(r ⊙ op(inputs))` for a fixed random projection `r`.
pub fn check_op(inputs: Vec<Tensor<f64>>, build: &Build) -> f64 {
    let (_, analytic) = projected_loss(&inputs, 99, build, true);
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; inputs[i].len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= FD_STEP;
            let fp = projected_loss(&plus, 99, build, false).0;
            let fm = projected_loss(&minus, 99, build, false).0;
            *slot = (fp - fm) / (2.0 * FD_STEP);
        }
        worst = worst.max(relative_error(a.data(), &numeric));
    }
    worst
}

/// Gradient-check every differentiable primitive; returns `(name, error)`.
pub fn primitive_checks() -> Vec<(&'static str, f64)> {
    let mut g = rng(7);
    let mut out = Vec::new();
    out.push((
        "conv2d",
        check_op(
            vec![random(&mut g, &[2, 5, 7]), random(&mut g, &[3, 2, 3, 3]), random(&mut g, &[3])],
            &|t, v| t.conv2d(v[0], v[1], Some(v[2])),
        ),
    ));
    out.push((
        "conv2d_1x1_nobias",
        check_op(vec![random(&mut g, &[3, 4, 4]), random(&mut g, &[2, 3, 1, 1])], &|t, v| {
            t.conv2d(v[0], v[1], None)
        }),
    ));
    out.push((
        "maxpool2x2",
        check_op(vec![distinct(&mut g, &[2, 5, 7])], &|t, v| Ok(t.maxpool2x2(v[0]))),
    ));
    out.push((
        "upsample2x",
        check_op(vec![random(&mut g, &[2, 3, 4])], &|t, v| t.upsample2x(v[0], 5, 7)),
    ));
    out.push((
        "concat",
        check_op(vec![random(&mut g, &[1, 3, 3]), random(&mut g, &[2, 3, 3])], &|t, v| {
            t.concat(&[v[0], v[1]])
        }),
    ));
    out.push((
        "slice_channels",
        check_op(vec![random(&mut g, &[4, 2, 3])], &|t, v| t.slice_channels(v[0], 1, 2)),
    ));
    out.push((
        "add",
        check_op(vec![random(&mut g, &[2, 3, 3]), random(&mut g, &[2, 3, 3])], &|t, v| t.add(v[0], v[1])),
    ));
    out.push((
        "sub",
        check_op(vec![random(&mut g, &[2, 3, 3]), random(&mut g, &[2, 3, 3])], &|t, v| t.sub(v[0], v[1])),
    ));
    out.push((
        "mul",
        check_op(vec![random(&mut g, &[2, 3, 3]), random(&mut g, &[2, 3, 3])], &|t, v| t.mul(v[0], v[1])),
    ));
    out.push((
        "mul_same_input",
        check_op(vec![random(&mut g, &[2, 3, 3])], &|t, v| t.mul(v[0], v[0])),
    ));
    out.push((
        "sigmoid",
        check_op(vec![random(&mut g, &[2, 3, 3]).map(|x| 3.0 * x)], &|t, v| Ok(t.sigmoid(v[0]))),
    ));
    out.push((
        "tanh",
        check_op(vec![random(&mut g, &[2, 3, 3]).map(|x| 3.0 * x)], &|t, v| Ok(t.tanh(v[0]))),
    ));
    out.push((
        "relu",
        check_op(vec![random_away_from_zero(&mut g, &[2, 3, 3], 1e-2)], &|t, v| Ok(t.relu(v[0]))),
    ));
    out.push((
        "clamp",
        // shift values off the clamp boundaries at 0 and 0.5
        check_op(
            vec![random_away_from_zero(&mut g, &[2, 3, 3], 1e-2).map(|x| if (x - 0.5).abs() < 1e-2 { x + 0.03 } else { x })],
            &|t, v| Ok(t.clamp(v[0], 0.0, 0.5)),
        ),
    ));
    out.push((
        "scale",
        check_op(vec![random(&mut g, &[2, 3])], &|t, v| Ok(t.scale(v[0], -2.5))),
    ));
    out.push((
        "mean",
        check_op(vec![random(&mut g, &[2, 3, 3])], &|t, v| Ok(t.mean(v[0]))),
    ));
    out.push((
        "weighted_sum",
        check_op(vec![random(&mut g, &[2, 2]), random(&mut g, &[3])], &|t, v| {
            let a = t.mean(v[0]);
            let b = t.mean(v[1]);
            let ab = t.mul(v[0], v[0])?;
            let c = t.mean(ab);
            t.weighted_sum(&[(a, 0.7), (b, -1.3), (c, 2.0)])
        }),
    ));
    out
}

pub fn miniature_config() -> ModelConfig {
    ModelConfig {
        channels: vec![1, 2],
        height: 8,
        width: 8,
        kernel: 3,
        layer_loss: vec![1.0, 0.5],
    }
}

pub fn miniature_frames(n: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut g = rng(seed);
    (0..n)
        .map(|_| (0..64).map(|_| g.random_range(0.0..255.0f32)).collect())
        .collect()
}

/// Gradient-check every parameter tensor of a 2-level network on 8×8 frames
/// against central differences of the sequence loss.
pub fn network_check(seed: u64) -> Vec<(String, f64)> {
    let mut model = PredNetModel::<f64>::init(miniature_config(), seed).unwrap();
    // biases start at zero or one; give them generic values
    let mut g = rng(seed + 1);
    for p in model.params_mut() {
        if p.shape().len() == 1 {
            for v in p.data_mut() {
                *v += g.random_range(-0.1..0.1);
            }
        }
    }
    let frames = miniature_frames(4, seed + 2);
    let refs: Vec<&[f32]> = frames.iter().map(Vec::as_slice).collect();
    let analytic = model.sequence_gradients(&refs).unwrap().grads;
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let mut out = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let n = analytic[i].len();
        let mut numeric = vec![0.0; n];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = model.params_mut()[i].data()[j];
            model.params_mut()[i].data_mut()[j] = orig + FD_STEP;
            let fp = model.forward_sequence(&refs).unwrap().loss;
            model.params_mut()[i].data_mut()[j] = orig - FD_STEP;
            let fm = model.forward_sequence(&refs).unwrap().loss;
            model.params_mut()[i].data_mut()[j] = orig;
            *slot = (fp - fm) / (2.0 * FD_STEP);
        }
        out.push((name.clone(), relative_error(analytic[i].data(), &numeric)));
    }
    out
}

/// Least squares by solving the 2×2 normal equations with Cramer's rule;
/// returns `(slope, intercept, r²)`.
pub fn ols_oracle(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let det = n * sxx - sx * sx;
    let intercept = (sy * sxx - sx * sxy) / det;
    let slope = (n * sxy - sx * sy) / det;
    let my = sy / n;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let sst: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    (slope, intercept, 1.0 - sse / sst)
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Student-t CDF from the substitution `t = √ν·tan θ`, under which the
/// density becomes proportional to `cos^(ν−1) θ` on (−π/2, π/2).
pub fn t_cdf_oracle(t: f64, dof: f64) -> f64 {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let f = |th: f64| th.cos().max(0.0).powf(dof - 1.0);
    let upper = (t / dof.sqrt()).atan();
    let total = simpson(f, -half_pi, half_pi, 200_000);
    simpson(f, -half_pi, upper, 200_000) / total
}

fn htk_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn htk_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangle edges for `n_mels` filters evenly spaced in mel between 0 and Nyquist.
fn triangle_edges(sample_rate: f64, n_mels: usize) -> Vec<f64> {
    let top = htk_mel(sample_rate / 2.0);
    (0..n_mels + 2).map(|i| htk_hz(top * i as f64 / (n_mels + 1) as f64)).collect()
}

fn triangle_weight(f: f64, lo: f64, c: f64, hi: f64) -> f64 {
    if f > lo && f <= c {
        (f - lo) / (c - lo)
    } else if f > c && f < hi {
        (hi - f) / (hi - c)
    } else {
        0.0
    }
}

/// Filter with the largest triangle weight at `f`.
pub fn strongest_band(f: f64, sample_rate: f64, n_mels: usize) -> usize {
    let e = triangle_edges(sample_rate, n_mels);
    (0..n_mels)
        .max_by(|&a, &b| {
            triangle_weight(f, e[a], e[a + 1], e[a + 2]).total_cmp(&triangle_weight(f, e[b], e[b + 1], e[b + 2]))
        })
        .unwrap()
}

/// Row-major `n_mels × cols` pixels computed with an O(n²) DFT per column.
pub fn naive_mel_pixels(samples: &[f32], sample_rate: f64, n_fft: usize, hop: usize, n_mels: usize, floor_db: f64) -> Vec<f64> {
    use std::f64::consts::PI;
    let len = samples.len() as isize;
    let cols = samples.len() / hop + 1;
    let reflect = |i: isize| -> f64 {
        let j = if i < 0 { -i } else if i >= len { 2 * (len - 1) - i } else { i };
        samples[j as usize] as f64
    };
    let edges = triangle_edges(sample_rate, n_mels);
    let mut mel = vec![0.0; n_mels * cols];
    for c in 0..cols {
        let frame: Vec<f64> = (0..n_fft)
            .map(|i| {
                let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / n_fft as f64).cos();
                w * reflect((c * hop + i) as isize - (n_fft / 2) as isize)
            })
            .collect();
        for k in 0..=n_fft / 2 {
            let f = k as f64 * sample_rate / n_fft as f64;
            let bands: Vec<usize> = (0..n_mels).filter(|&m| f > edges[m] && f < edges[m + 2]).collect();
            if bands.is_empty() {
                continue;
            }
            let (mut re, mut im) = (0.0, 0.0);
            for (i, x) in frame.iter().enumerate() {
                let ph = -2.0 * PI * ((k * i) % n_fft) as f64 / n_fft as f64;
                re += x * ph.cos();
                im += x * ph.sin();
            }
            let p = re * re + im * im;
            for m in bands {
                mel[m * cols + c] += p * triangle_weight(f, edges[m], edges[m + 1], edges[m + 2]);
            }
        }
    }
    let max = mel.iter().copied().fold(0.0, f64::max);
    mel.iter()
        .map(|&s| {
            let db = if s > 0.0 { 10.0 * (s / max).log10() } else { floor_db };
            (db.max(floor_db) - floor_db) / -floor_db * 255.0
        })
        .collect()
}
