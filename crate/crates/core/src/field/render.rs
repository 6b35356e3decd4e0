//! Volume rendering along a ray, the depth-variance regularizer, and the
//! reverse pass through both.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, softplus, GradSink, Ray, Trilinear, VoxelField};
use crate::error::{Error, Result};

/// Samples along one ray and their compositing weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RaySampleSet {
    /// `t_0 .. t_N`, nondecreasing.
    pub boundaries: Vec<f64>,
    pub sigma: Vec<f64>,
    pub color: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    /// `sum_i w_i (t_i + t_{i-1}) / 2`.
    pub expected_depth: f64,
}

impl RaySampleSet {
    /// Sample set carrying only boundaries and weights, as the regularizer needs.
    pub fn from_weights(boundaries: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if boundaries.len() != weights.len() + 1 {
            return Err(Error::Shape(format!(
                "{} boundaries for {} weights",
                boundaries.len(),
                weights.len()
            )));
        }
        if boundaries.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidParameter("boundaries must be nondecreasing".into()));
        }
        let expected_depth = weights
            .iter()
            .enumerate()
            .map(|(i, w)| w * 0.5 * (boundaries[i] + boundaries[i + 1]))
            .sum();
        let n = weights.len();
        Ok(RaySampleSet {
            boundaries,
            sigma: vec![0.0; n],
            color: vec![[0.0; 3]; n],
            weights,
            expected_depth,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn delta(&self, i: usize) -> f64 {
        self.boundaries[i + 1] - self.boundaries[i]
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Forward results kept for the reverse pass.
#[derive(Clone, Debug)]
pub struct RayTape {
    pub samples: RaySampleSet,
    lookups: Vec<Option<Trilinear>>,
    density_raw: Vec<f64>,
    /// Transmittance after each segment, `T_{i+1}`.
    trans_after: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub color: [f64; 3],
    pub tape: RayTape,
}

impl RenderOutput {
    pub fn samples(&self) -> &RaySampleSet {
        &self.tape.samples
    }

    pub fn opacity(&self) -> f64 {
        self.tape.samples.total_weight()
    }
}

/// `n + 1` boundaries on `[near, far]`. Interior boundaries are jittered
/// by up to 45% of the spacing when an RNG is supplied.
pub fn stratified_boundaries<R: Rng + ?Sized>(
    near: f64,
    far: f64,
    n: usize,
    rng: Option<&mut R>,
) -> Vec<f64> {
    let step = (far - near) / n as f64;
    let mut b: Vec<f64> = (0..=n).map(|k| near + step * k as f64).collect();
    b[n] = far;
    if let Some(rng) = rng {
        for t in b.iter_mut().take(n).skip(1) {
            *t += step * 0.9 * (rng.random::<f64>() - 0.5);
        }
    }
    b
}

/// Renders along `ray` using the given segment boundaries. Each segment is
/// sampled at its midpoint. Unaccumulated weight contributes black.
pub fn render_samples(field: &VoxelField, ray: &Ray, boundaries: Vec<f64>) -> RenderOutput {
    let n = boundaries.len().saturating_sub(1);
    let act = field.color_activation;
    let mut lookups = Vec::with_capacity(n);
    let mut density_raw = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    let mut color = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut trans_after = Vec::with_capacity(n);

    let mut out = [0.0; 3];
    let mut trans = 1.0;
    let mut expected_depth = 0.0;
    for i in 0..n {
        let (t0, t1) = (boundaries[i], boundaries[i + 1]);
        let look = field.locate(&ray.at(0.5 * (t0 + t1)));
        let (raw_d, s, c) = match &look {
            Some(t) => {
                let raw = field.interpolate(t);
                (
                    raw[0],
                    softplus(raw[0]),
                    [act.apply(raw[1]), act.apply(raw[2]), act.apply(raw[3])],
                )
            }
            None => (f64::NEG_INFINITY, 0.0, [0.0; 3]),
        };
        let tau = (t1 - t0) * s;
        let absorbed = -(-tau).exp_m1();
        let w = absorbed * trans;
        trans *= 1.0 - absorbed;
        for k in 0..3 {
            out[k] += w * c[k];
        }
        expected_depth += w * 0.5 * (t0 + t1);
        lookups.push(look);
        density_raw.push(raw_d);
        sigma.push(s);
        color.push(c);
        weights.push(w);
        trans_after.push(trans);
    }

    RenderOutput {
        color: out,
        tape: RayTape {
            samples: RaySampleSet {
                boundaries,
                sigma,
                color,
                weights,
                expected_depth,
            },
            lookups,
            density_raw,
            trans_after,
        },
    }
}

/// Stratified render with `n_samples` segments between the ray bounds.
pub fn render_ray<R: Rng + ?Sized>(
    field: &VoxelField,
    ray: &Ray,
    n_samples: usize,
    rng: Option<&mut R>,
) -> Result<RenderOutput> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample per ray".into()));
    }
    if !(ray.t_far > ray.t_near && ray.t_near >= 0.0 && ray.t_far.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "degenerate ray bounds [{}, {}]",
            ray.t_near, ray.t_far
        )));
    }
    let b = stratified_boundaries(ray.t_near, ray.t_far, n_samples, rng);
    Ok(render_samples(field, ray, b))
}

impl RayTape {
    /// Accumulates parameter gradients for a loss with `d loss / d color =
    /// grad_color` and, optionally, direct `d loss / d w_i = grad_weights[i]`.
    pub fn backward(
        &self,
        field: &VoxelField,
        grad_color: [f64; 3],
        grad_weights: Option<&[f64]>,
        sink: &mut (impl GradSink + ?Sized),
    ) {
        let s = &self.samples;
        let n = s.len();
        let act = field.color_activation;

        // G_i = dL/dw_i; dL/dtau_i = G_i T_{i+1} - sum_{k>i} G_k w_k
        let mut suffix = 0.0;
        for i in (0..n).rev() {
            let c = s.color[i];
            let mut g = grad_color[0] * c[0] + grad_color[1] * c[1] + grad_color[2] * c[2];
            if let Some(gw) = grad_weights {
                g += gw[i];
            }
            let d_tau = g * self.trans_after[i] - suffix;
            suffix += g * s.weights[i];

            let Some(look) = &self.lookups[i] else {
                continue;
            };
            let d_raw_density = d_tau * s.delta(i) * sigmoid(self.density_raw[i]);
            let w = s.weights[i];
            let d_raw_color = [
                w * grad_color[0] * act.derivative(c[0]),
                w * grad_color[1] * act.derivative(c[1]),
                w * grad_color[2] * act.derivative(c[2]),
            ];
            if d_raw_density == 0.0 && d_raw_color == [0.0; 3] {
                continue;
            }
            for corner in 0..8 {
                let tw = look.weights[corner];
                if tw == 0.0 {
                    continue;
                }
                sink.add(
                    look.nodes[corner],
                    [
                        tw * d_raw_density,
                        tw * d_raw_color[0],
                        tw * d_raw_color[1],
                        tw * d_raw_color[2],
                    ],
                );
            }
        }
    }
}

/// How the depth distribution is formed from compositing weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMode {
    /// Normalize by the total weight, then scale the variance back by it.
    #[default]
    Normalized,
    /// Use the raw weights as the distribution.
    Direct,
}

/// Per-segment first and second moments of a uniform distribution on
/// `[t_{i-1}, t_i]`.
fn segment_moments(s: &RaySampleSet, i: usize) -> (f64, f64) {
    let (a, b) = (s.boundaries[i], s.boundaries[i + 1]);
    (0.5 * (a + b), (a * a + a * b + b * b) / 3.0)
}

fn weight_sums(s: &RaySampleSet) -> (f64, f64, f64) {
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for (i, &w) in s.weights.iter().enumerate() {
        let (m1, m2) = segment_moments(s, i);
        s0 += w;
        s1 += w * m1;
        s2 += w * m2;
    }
    (s0, s1, s2)
}

/// Variance of the piecewise-constant depth distribution induced by the
/// compositing weights, in closed form. Zero total weight gives zero.
pub fn weight_variance(s: &RaySampleSet, mode: VarianceMode) -> f64 {
    let (s0, s1, _) = weight_sums(s);
    if s0 <= 0.0 {
        return 0.0;
    }
    let mean = match mode {
        VarianceMode::Normalized => s1 / s0,
        VarianceMode::Direct => s1,
    };
    // sum_i w_i [(t_i - m)^2 + (t_i - m)(t_{i-1} - m) + (t_{i-1} - m)^2] / 3
    s.weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let (a, b) = (s.boundaries[i] - mean, s.boundaries[i + 1] - mean);
            w * (a * a + a * b + b * b) / 3.0
        })
        .sum()
}

/// Derivative of [`weight_variance`] with respect to each weight.
pub fn weight_variance_grad(s: &RaySampleSet, mode: VarianceMode) -> Vec<f64> {
    let (s0, s1, _) = weight_sums(s);
    if s0 <= 0.0 {
        return vec![0.0; s.len()];
    }
    (0..s.len())
        .map(|i| {
            let (m1, m2) = segment_moments(s, i);
            match mode {
                // L = S2 - S1^2 / S0
                VarianceMode::Normalized => {
                    let mean = s1 / s0;
                    m2 - 2.0 * mean * m1 + mean * mean
                }
                // L = S2 - 2 S1^2 + S1^2 S0
                VarianceMode::Direct => m2 - 4.0 * s1 * m1 + 2.0 * s1 * m1 * s0 + s1 * s1,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{softplus_inverse, Aabb, FieldGrad};
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn axis_ray(near: f64, far: f64) -> Ray {
        Ray::new(Vector3::new(0.0, 0.0, -2.0), Vector3::new(0.0, 0.0, 1.0), near, far).unwrap()
    }

    fn no_rng() -> Option<&'static mut ChaCha8Rng> {
        None
    }

    #[test]
    fn empty_space_renders_black() {
        let f = VoxelField::new([4, 4, 4], Aabb::cube(1.0), 1e-12, [3.0; 3]).unwrap();
        let out = render_ray(&f, &axis_ray(1.0, 3.0), 16, no_rng()).unwrap();
        assert!(out.color.iter().all(|c| c.abs() < 1e-9));
        assert!(out.samples().weights.iter().all(|w| w.abs() < 1e-10));
    }

    #[test]
    fn opaque_first_segment() {
        // one segment of length 1 with sigma 20
        let f = VoxelField::new([2, 2, 2], Aabb::cube(1.0), 20.0, [0.3, 0.6, 0.9]).unwrap();
        let out = render_samples(&f, &axis_ray(1.0, 3.0), vec![1.0, 2.0, 3.0]);
        let w = &out.samples().weights;
        assert!((w[0] - (1.0 - (-20.0f64).exp())).abs() < 1e-12);
        assert!((out.color[1] - 0.6).abs() < 1e-6);
    }

    #[test]
    fn two_segments_of_ln2() {
        let sigma = std::f64::consts::LN_2;
        let f = VoxelField::new([2, 2, 2], Aabb::cube(1.0), sigma, [1.0, 2.0, 4.0]).unwrap();
        let out = render_samples(&f, &axis_ray(1.0, 3.0), vec![1.0, 2.0, 3.0]);
        let w = &out.samples().weights;
        assert!((w[0] - 0.5).abs() < 1e-12);
        assert!((w[1] - 0.25).abs() < 1e-12);
        assert!((out.color[2] - (0.5 * 4.0 + 0.25 * 4.0)).abs() < 1e-12);
    }

    #[test]
    fn render_rejects_bad_input() {
        let f = VoxelField::new([2, 2, 2], Aabb::cube(1.0), 1.0, [1.0; 3]).unwrap();
        assert!(render_ray(&f, &axis_ray(1.0, 3.0), 0, no_rng()).is_err());
        let mut r = axis_ray(1.0, 3.0);
        r.t_far = 1.0;
        assert!(render_ray(&f, &r, 4, no_rng()).is_err());
    }

    #[test]
    fn jittered_boundaries_stay_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let b = stratified_boundaries(0.5, 2.5, 32, Some(&mut rng));
            assert_eq!(b[0], 0.5);
            assert_eq!(b[32], 2.5);
            assert!(b.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn variance_single_segment_is_uniform_variance() {
        let s = RaySampleSet::from_weights(vec![0.3, 1.7], vec![1.0]).unwrap();
        let d: f64 = 1.4;
        assert!((weight_variance(&s, VarianceMode::Normalized) - d * d / 12.0).abs() < 1e-12);
        assert!((weight_variance(&s, VarianceMode::Direct) - d * d / 12.0).abs() < 1e-12);
        let shifted = RaySampleSet::from_weights(vec![10.3, 11.7], vec![1.0]).unwrap();
        assert!(
            (weight_variance(&s, VarianceMode::Normalized)
                - weight_variance(&shifted, VarianceMode::Normalized))
            .abs()
                < 1e-12
        );
    }

    #[test]
    fn variance_two_point_masses() {
        let (a, b) = (1.0, 4.0);
        let s = RaySampleSet::from_weights(vec![a, a, b, b], vec![0.5, 0.0, 0.5]).unwrap();
        assert!((weight_variance(&s, VarianceMode::Normalized) - (b - a) * (b - a) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn variance_zero_weight_is_zero() {
        let s = RaySampleSet::from_weights(vec![0.0, 1.0, 2.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(weight_variance(&s, VarianceMode::Normalized), 0.0);
        assert_eq!(weight_variance_grad(&s, VarianceMode::Normalized), vec![0.0, 0.0]);
    }

    #[test]
    fn variance_grad_matches_finite_differences() {
        let b = vec![0.0, 0.3, 0.9, 1.0, 1.8, 2.0];
        let w = vec![0.1, 0.25, 0.05, 0.3, 0.12];
        for mode in [VarianceMode::Normalized, VarianceMode::Direct] {
            let s = RaySampleSet::from_weights(b.clone(), w.clone()).unwrap();
            let g = weight_variance_grad(&s, mode);
            for i in 0..w.len() {
                let h = 1e-6;
                let mut wp = w.clone();
                wp[i] += h;
                let mut wm = w.clone();
                wm[i] -= h;
                let fp = weight_variance(&RaySampleSet::from_weights(b.clone(), wp).unwrap(), mode);
                let fm = weight_variance(&RaySampleSet::from_weights(b.clone(), wm).unwrap(), mode);
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-7, "{mode:?} {i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn single_node_color_gradient() {
        // 2x2x2 grid with constant raw values behaves like a single node
        let f = VoxelField::new([2, 2, 2], Aabb::cube(1.0), 0.7, [0.4, 0.8, 1.6]).unwrap();
        let out = render_samples(&f, &axis_ray(1.0, 3.0), vec![1.0, 3.0]);
        let w = out.samples().weights[0];
        let mut g = FieldGrad::zeros_like(&f);
        out.tape.backward(&f, [1.0, 0.0, 0.0], None, &mut g);
        let total: f64 = g.params.iter().map(|p| p[1]).sum();
        assert!((total - w * 0.4).abs() < 1e-12);
        assert!(g.params.iter().all(|p| p[2] == 0.0 && p[3] == 0.0));
    }

    #[test]
    fn untouched_node_gets_no_gradient() {
        let mut f = VoxelField::new([5, 5, 5], Aabb::cube(1.0), 0.5, [0.5; 3]).unwrap();
        f.params[0][0] = softplus_inverse(2.0);
        let ray = Ray::new(Vector3::new(0.0, 0.0, -2.0), Vector3::new(0.0, 0.0, 1.0), 1.0, 3.0).unwrap();
        let out = render_ray(&f, &ray, 32, no_rng()).unwrap();
        let mut g = FieldGrad::zeros_like(&f);
        out.tape.backward(&f, [1.0, 1.0, 1.0], None, &mut g);
        // corner node (0,0,0) is far from the central axis
        assert_eq!(g.params[0], [0.0; 4]);
        assert!(g.squared_norm() > 0.0);
    }
}
