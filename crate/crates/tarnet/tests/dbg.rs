use tarnet::estimators::*;
use tarnet::pipeline::standardize;
use tarnet::tar::*;
use tarnet::var::*;
use rayon::prelude::*;

fn train_loss(dgp: &str, seed: u64, arch: TarArch, lr: f64, cap: usize) -> (f64, f64, usize, usize) {
    let n = 25; let p = 3; let ranks = (2, 2, 2);
    let total_rows = 501; let t_eff = total_rows - p;
    let series = if dgp == "ldgp" {
        let w = generate_low_tucker_weights(n, p, ranks, 0.9, seed).unwrap();
        simulate_var(&w, &NoiseSpec::identity(n, seed ^ 0x99), t_eff, 500).unwrap()
    } else {
        generate_nl_dgp(n, p, ranks, t_eff, 500, seed).unwrap()
    };
    let train_rows = total_rows - 1;
    let (std_s, _) = standardize(&series, 0..train_rows).unwrap();
    let train = std_s.slice_rows(0, train_rows).unwrap();
    let d = build_design(&train, p, true).unwrap();
    let ltar = train_tar(&d, TarArch::Ltar, ranks, &TrainConfig { seed: seed ^ 0xf0f0, ..TrainConfig::default() }, true).unwrap();
    let cfg = TrainConfig { seed: seed ^ 0xf0f0, learning_rate: lr, max_epochs: cap, ..TrainConfig::default() };
    let fit = train_tar(&d, arch, ranks, &cfg, true).unwrap();
    (ltar.final_loss, fit.final_loss, fit.epochs_run, fit.lr_halvings)
}

#[test]
fn dbg_long_train() {
    let t0 = std::time::Instant::now();
    let seeds: Vec<u64> = vec![6119, 6153, 6000, 6068];
    for dgp in ["nldgp", "ldgp"] {
        let rows: Vec<String> = seeds.par_iter().map(|&s| {
            let (lt, tl, ep, h) = train_loss(dgp, s, TarArch::Tar(Activation::Sigmoid), 0.01, 150_000);
            format!("{dgp} seed {s}: ltar {lt:.3} tar {tl:.3} (ep {ep} halv {h})")
        }).collect();
        for r in rows { eprintln!("{r} [{:.0}s]", t0.elapsed().as_secs_f64()); }
    }
}
