//! Render one ray through a random voxel field and compare the analytic
//! gradient of a loss against central differences.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rawfield::field::{render_samples, stratified_boundaries, Aabb, FieldGrad, Ray, VoxelField};

fn loss(color: [f64; 3], target: [f64; 3]) -> f64 {
    (0..3).map(|c| (color[c] - target[c]).powi(2)).sum()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut field = VoxelField::new([8; 3], Aabb::cube(1.0), 1.0, [0.5; 3])?;
    for p in &mut field.params {
        *p = [rng.random_range(-1.0..2.0), rng.random_range(-1.5..0.0), rng.random_range(-1.5..0.0), rng.random_range(-1.5..0.0)];
    }
    let ray = Ray::new(Vector3::new(-0.2, 0.1, -3.0), Vector3::new(0.05, -0.02, 1.0), 2.0, 4.0)?;
    let boundaries = stratified_boundaries(ray.t_near, ray.t_far, 32, Some(&mut rng));
    let target = [0.3, 0.2, 0.1];

    let out = render_samples(&field, &ray, boundaries.clone());
    println!("color {:.4?}, opacity {:.4}", out.color, out.opacity());
    let d_color = [0, 1, 2].map(|c| 2.0 * (out.color[c] - target[c]));
    let mut grad = FieldGrad::zeros_like(&field);
    out.tape.backward(&field, d_color, None, &mut grad);

    let mut touched: Vec<usize> = (0..field.len()).filter(|&n| grad.params[n][0] != 0.0).collect();
    touched.truncate(6);
    let h = 1e-5;
    println!("node  param     analytic      numeric");
    for n in touched {
        for k in [0, 2] {
            let keep = field.params[n][k];
            field.params[n][k] = keep + h;
            let up = loss(render_samples(&field, &ray, boundaries.clone()).color, target);
            field.params[n][k] = keep - h;
            let down = loss(render_samples(&field, &ray, boundaries.clone()).color, target);
            field.params[n][k] = keep;
            println!("{n:>4}  {k:>5}  {:>11.4e}  {:>11.4e}", grad.params[n][k], (up - down) / (2.0 * h));
        }
    }
    Ok(())
}
