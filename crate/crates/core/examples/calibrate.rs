//! Scratch calibration run (not shipped).
use specfid::fidelity::{evaluate_cs, spectral_difference, SdScale, CS_EPOCHS, CS_LR};
use specfid::ganlab::{generate_images, train_on_images, LossKind, TrainConfig};
use specfid::imagecore::{synth_corpus, CorpusKind};
use specfid::spectrum::{corpus_profiles, profile_stats, ProfileMode};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(60);
    let corpus_n: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(256);
    let batch: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(64);

    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_corpus(CorpusKind::BimodalNoise, corpus_n, 16, 77, dir.path()).unwrap();
    let images: Vec<_> = manifest
        .load_images(dir.path())
        .unwrap()
        .into_iter()
        .map(|(img, _)| img)
        .collect();
    let real_profiles = corpus_profiles(&images, ProfileMode::Binned).unwrap();
    let (rmean, _) = profile_stats(&real_profiles).unwrap();
    let logm: Vec<f64> = rmean.values().iter().map(|v| v.ln_1p()).collect();
    println!("real log-mean: {:?}", logm.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());

    for loss in [LossKind::Dcgan, LossKind::Lsgan] {
        for seed in [1u64, 2, 3] {
            for spectral in [false, true] {
                let t0 = std::time::Instant::now();
                let mut config = TrainConfig::new(loss, spectral, epochs, 16, seed);
                config.batch = batch;
                let out = train_on_images(&config, &images).unwrap();
                let gen = generate_images(&out.generator, 256, 16, seed ^ 0xfeed);
                let gen_profiles = corpus_profiles(&gen, ProfileMode::Binned).unwrap();
                let sd = spectral_difference(&real_profiles, &gen_profiles, SdScale::Log1p).unwrap();
                let cs = evaluate_cs(&real_profiles, &gen_profiles, CS_EPOCHS, CS_LR, seed).unwrap();
                let (gmean, _) = profile_stats(&gen_profiles).unwrap();
                let glogm: Vec<f64> = gmean.values().iter().map(|v| v.ln_1p()).collect();
                println!(
                    "{:?} seed {} spectral {}: SD {:.4} CS {:.4} (acc {:.4}) [{:.1}s]",
                    loss, seed, spectral, sd, cs.cs, cs.lr_train_acc, t0.elapsed().as_secs_f64()
                );
                let _ = glogm;
            }
        }
    }
}
