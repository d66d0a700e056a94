use ndarray::{Array3, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spac_derain::cnn::{loss_and_grad, xavier_init, CnnModel, ModelShape, TrainingSample};
use spac_derain::features::{ChannelLayout, FeatureStack};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn toy(seed: u64) -> (CnnModel, TrainingSample) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // one F1, one temporal and one sorted channel
    let layout = ChannelLayout::new(2, 1);
    let mut model = xavier_init(&ModelShape::with_widths(3, &[4, 4, 4]), layout, seed).unwrap();
    for l in &mut model.layers {
        l.bias.mapv_inplace(|_| rng.random_range(-0.1..0.1));
    }
    let n = 12;
    let m_sp = Array2::from_shape_fn((n, n), |(r, c)| if (r as i32 - 6).pow(2) + (c as i32 - 5).pow(2) < 30 { 1.0 } else { 0.0 });
    let channels = Array3::from_shape_fn((3, n, n), |(_, r, c)| m_sp[[r, c]] * rng.random_range(-0.3..0.3));
    let x_avg = Array2::from_shape_fn((n, n), |_| rng.random_range(0.2..0.8));
    let target = &x_avg + &Array2::from_shape_fn((n, n), |_| rng.random_range(-0.1..0.1));
    let stack = FeatureStack { channels, x_avg, m_sp, layout };
    (model, TrainingSample { stack, target })
}

fn loss(model: &CnnModel, s: &TrainingSample) -> f64 {
    loss_and_grad(model, s).unwrap().0
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-7)
}

#[test]
fn every_gradient_matches_central_differences() {
    let (model, sample) = toy(3);
    let (_, grads) = loss_and_grad(&model, &sample).unwrap();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for li in 0..model.layers.len() {
        for idx in 0..model.layers[li].weights.len() {
            let mut plus = model.clone();
            let mut minus = model.clone();
            plus.layers[li].weights.as_slice_mut().unwrap()[idx] += H;
            minus.layers[li].weights.as_slice_mut().unwrap()[idx] -= H;
            let num = (loss(&plus, &sample) - loss(&minus, &sample)) / (2.0 * H);
            let ana = grads.weights[li].as_slice().unwrap()[idx];
            let e = rel_err(ana, num);
            assert!(e < TOL, "layer {li} weight {idx}: analytic {ana:e}, numeric {num:e}");
            worst = worst.max(e);
            checked += 1;
        }
        for idx in 0..model.layers[li].bias.len() {
            let mut plus = model.clone();
            let mut minus = model.clone();
            plus.layers[li].bias[idx] += H;
            minus.layers[li].bias[idx] -= H;
            let num = (loss(&plus, &sample) - loss(&minus, &sample)) / (2.0 * H);
            let ana = grads.bias[li][idx];
            let e = rel_err(ana, num);
            assert!(e < TOL, "layer {li} bias {idx}: analytic {ana:e}, numeric {num:e}");
            worst = worst.max(e);
            checked += 1;
        }
    }
    assert_eq!(checked, model.parameter_count());
    eprintln!("{checked} parameters, worst relative error {worst:e}");
}

#[test]
fn loss_is_nonnegative_and_zero_only_for_exact_residual() {
    let (model, mut sample) = toy(8);
    assert!(loss(&model, &sample) > 0.0);
    let detail = spac_derain::cnn::forward(&model, &sample.stack).unwrap();
    sample.target = &sample.stack.x_avg + &detail;
    assert!(loss(&model, &sample) < 1e-28);
}
