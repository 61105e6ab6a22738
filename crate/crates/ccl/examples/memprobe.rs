use ccl::synth::{default_styles, generate_benchmark, SceneSpec, SplitSizes};
use ccl::trainer::{train, TrainConfig, TrainMode};

fn rss_mb() -> f64 {
    let s = std::fs::read_to_string("/proc/self/status").unwrap();
    for l in s.lines() {
        if l.starts_with("VmRSS") {
            let kb: f64 = l.split_whitespace().nth(1).unwrap().parse().unwrap();
            return kb / 1024.0;
        }
    }
    0.0
}

fn main() {
    let spec = SceneSpec::default();
    let styles = default_styles(3, spec.num_classes);
    let sizes = SplitSizes { source_train: 200, target_train: 100, target_eval: 50 };
    let ds = generate_benchmark(&spec, &styles, &sizes, 1).unwrap();
    println!("dataset built: rss {:.0} MB", rss_mb());
    for (mode, iters) in [(TrainMode::SourceOnly, 600), (TrainMode::Ccl, 600)] {
        let cfg = TrainConfig {
            targets: 2, iterations: iters, batch_size: 2,
            base_width: 8, depth: 2, disc_base_width: 8,
            seg_lr: 2.5e-3, eval_every: 200, seed: 1, mode,
            ..TrainConfig::default()
        };
        let run = train(&ds, &cfg).unwrap();
        println!("{mode} done ({} reports): rss {:.0} MB", run.reports.len(), rss_mb());
        drop(run);
        println!("  after drop: rss {:.0} MB", rss_mb());
    }
}
