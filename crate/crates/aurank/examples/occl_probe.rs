//! Scratch probe for uncertainty/occlusion dynamics. Not part of the crate.

use aurank::data::{
    build_pair_dataset, generate_synthetic, split_by_video, PairSamplerConfig, SyntheticConfig,
};
use aurank::eval::occlusion_auroc;
use aurank::pseudo_intensity::{train_pseudo, TrainConfig};
use aurank::uncertainty::{
    predict_uncertainty, train_uncertainty, ExpandedRankingLoss, LossForm,
};

fn stage_cfg(epochs: usize, lr: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        learning_rate: lr,
        seed,
        ..Default::default()
    }
}

fn main() {
    for &data_seed in &[7u64, 8, 9] {
        for (u_epochs, u_lr, u_hidden) in [
            (30usize, 3e-3f64, vec![32usize, 16]),
            (80, 1e-3, vec![32, 16]),
            (80, 1e-3, vec![64, 32]),
        ] {
            let hidden = vec![32usize, 16];
            let cfg = SyntheticConfig {
                num_videos: 60,
                frames_per_video: 80,
                feature_dim: 8,
                num_aus: 1,
                occlusion_probability: 0.2,
                occlusion_noise_scale: 1.0,
                seed: data_seed,
                ..Default::default()
            };
            let videos = generate_synthetic(&cfg).unwrap();
            let (train, val) = split_by_video(videos, 0.2, 42).unwrap();
            let sampler = PairSamplerConfig {
                max_pairs_per_video: 800,
                seed: data_seed,
                ..Default::default()
            };
            let pairs = build_pair_dataset(&train, 0, &sampler).unwrap();

            let pseudo = train_pseudo(&pairs, &train, 0, &hidden, 1.0, &stage_cfg(10, 3e-3, 1), None).unwrap();
            let loss = ExpandedRankingLoss::new(1.0, 1e-3, LossForm::Corrected).unwrap();
            let unc = train_uncertainty(&pairs, &train, &pseudo, &u_hidden, loss, &stage_cfg(u_epochs, u_lr, 2)).unwrap();

            let collect = |vs: &[aurank::data::VideoSequence]| {
                let mut sigmas = Vec::new();
                let mut flags = Vec::new();
                for video in vs {
                    let s = predict_uncertainty(&unc, video).unwrap();
                    for (f, si) in video.frames.iter().zip(s) {
                        sigmas.push(si);
                        flags.push(f.occluded == Some(true));
                    }
                }
                occlusion_auroc(&sigmas, &flags).unwrap()
            };
            println!(
                "seed={data_seed} u=({u_epochs},{u_lr},{u_hidden:?}): train_auroc={:.3} val_auroc={:.3}",
                collect(&train), collect(&val),
            );
        }
    }
}
