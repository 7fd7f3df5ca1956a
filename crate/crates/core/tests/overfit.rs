//! Public-API round trip: preprocess a cloudy stack, fit one scene and score it.

use cotmisr_core::image::{Image, Mask};
use cotmisr_core::metrics::MetricConfig;
use cotmisr_core::model::{Architecture, CotConfig, CotMisr};
use cotmisr_core::rng;
use cotmisr_core::scene::{pad_frames, preprocess, Band, LrStack};
use cotmisr_core::train::{evaluate, train_step, Adam, Batch, TrainConfig};

fn scene() -> LrStack {
    let lr = 12;
    let hr = Image::from_fn(3 * lr, 3 * lr, |x, y| (0.5 + 0.3 * ((x as f64) * 0.4).sin() * ((y as f64) * 0.25).cos()) as f32);
    let mut r = rng::stream(1, 1);
    let frames: Vec<Image> = (0..5)
        .map(|_| Image::from_fn(lr, lr, |x, y| (hr.get(3 * x + 1, 3 * y + 1) as f64 + 0.01 * rng::normal(&mut r)).clamp(0.0, 1.0) as f32))
        .collect();
    let mut masks = vec![Mask::filled(lr, lr, true); 5];
    // the last frame is mostly cloud and must be dropped
    masks[4] = Mask::from_fn(lr, lr, |x, _| x < 2);
    LrStack::new("RED/imgset0007", Band::Red, frames, masks, Some((hr, Mask::filled(3 * lr, 3 * lr, true)))).unwrap()
}

#[test]
fn a_small_network_fits_one_scene() {
    let mut cfg = CotConfig { k: 4, c_e: 8, arch: Architecture::parse("1c1t").unwrap(), ..CotConfig::default() };
    cfg.lrca.ca_reduction = 2;
    cfg.tblock.heads = 2;
    cfg.tblock.ff_dim = 16;
    let model = CotMisr::new(cfg).unwrap();

    let clean = preprocess(&scene(), 0.85);
    assert_eq!(clean.k(), 4);
    let stack = pad_frames(&clean, 4).unwrap();
    let batch = Batch::from_stacks(&[&stack]).unwrap();

    let mut params = model.init_params(&mut rng::stream(0, rng::STREAM_INIT));
    let mut adam = Adam::new(&params);
    let tc = TrainConfig::default();
    let metric = MetricConfig::default();
    let before = evaluate(&model, &params, std::slice::from_ref(&stack), &metric).unwrap()[0];
    let mut r = rng::stream(0, 7);
    let losses: Vec<f64> =
        (0..60).map(|_| train_step(&model, &mut params, &mut adam, &tc, tc.lr_at(0), &batch, &mut r).unwrap().loss).collect();
    let after = evaluate(&model, &params, std::slice::from_ref(&stack), &metric).unwrap()[0];

    assert!(losses[59] < 0.5 * losses[0], "loss {} -> {}", losses[0], losses[59]);
    assert!(after.cpsnr > before.cpsnr + 3.0, "cPSNR {} -> {}", before.cpsnr, after.cpsnr);
    assert!(after.cssim.is_finite() && after.cssim <= 1.0);
}
