use noisegeo::gan::{train_gan, DatasetSpec, TrainConfig, InjectionMode};
use noisegeo::inject::Variant;

fn main() {
    // thin annulus: the ring's thickness is a "detail" dimension that
    // injected noise can fill while the content path tracks the skeleton
    let data = DatasetSpec::Annulus2d { r_inner: 1.0, r_outer: 1.2 };
    for seed in [0u64, 1, 2] {
        for (label, mode) in [("none", InjectionMode::None), ("eni", InjectionMode::Eni), ("rni", InjectionMode::Rni(Variant::Full))] {
            let cfg = TrainConfig {
                latent_dim: 2, injection: mode, steps: 3000, metric_every: 0,
                metric_samples: 8192, ppl_paths: 1024, condition_pairs: 20000, grad_probes: 256,
                seed, ..TrainConfig::default()
            };
            let out = train_gan(&cfg, &data).unwrap();
            let e = out.report.final_entry().unwrap();
            println!("seed {seed} {label:5}: js={:.3} fr={:.4} ppl={:.2} mc={:.3} ttmc={:.3} proxy={:.2}",
                e.js, e.frechet, e.path_length, e.mc, e.ttmc, e.grad_proxy);
        }
    }
}
