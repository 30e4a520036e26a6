use accap::data::*;
use accap::policy::*;
use accap::numerics::*;
use rand::Rng;

#[test]
fn scan_conditioned() {
    let dims = PolicyDims { vocab: 6, d_h: 4, d_e: 3, feat_dim: 5 };
    let mut worst = 0.0f64;
    for seed in 0..30u64 {
        let mut rng = accap::rng::seeded(seed);
        let net = PolicyNet::new(dims, &mut rng);
        let f = ImageFeature { values: (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let mut reference: Vec<usize> = (0..4).map(|_| rng.gen_range(0..6)).collect();
        reference.push(2);
        let (_, grads) = net.teacher_forced_loss(&f, &reference).unwrap();
        let fc = f.clone(); let rc = reference.clone();
        let report = finite_diff_check_conditioned(net.store(), &grads, 1e-5, move |s| {
            let n = PolicyNet::from_store(dims, s.clone())?;
            n.teacher_forced_loss_value(&fc, &rc)
        }).unwrap();
        worst = worst.max(report.max_rel_error);
        assert!(report.max_rel_error <= 1e-4, "seed {seed}: {}", report.max_rel_error);
    }
    println!("worst over 30 arbitrary seeds: {worst:.3e}");
}
