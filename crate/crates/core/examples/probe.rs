use otreg_core::pipeline::{register, RegistrationConfig};
use otreg_core::scene::{generate_scene, SceneSpec};
use otreg_core::metrics::{rotation_error_deg, translation_error};

fn main() {
    let n = 10;
    for (si, ci, parts) in [(2usize,3usize,6usize),(8,3,6),(8,8,6),(2,3,12),(8,3,12),(8,8,12),(20,8,12),(8,8,20)] {
        let mut errs = vec![];
        let mut hits = 0;
        for seed in 0..n {
            let spec = SceneSpec { n_parts: parts, ..SceneSpec { seed, ..Default::default() } };
            let pair = generate_scene(&spec).unwrap();
            let mut cfg = RegistrationConfig { seed: 1000 + seed, ..Default::default() };
            cfg.hp.sinkhorn_iters = si;
            cfg.hp.conf_iters = ci;
            let r = register(&pair.query, &pair.reference, &cfg).unwrap();
            let re = rotation_error_deg(&r.pose, &pair.gt_pose);
            let te = translation_error(&r.pose, &pair.gt_pose);
            if re < 5.0 && te < 0.02 * pair.diameter() { hits += 1; }
            errs.push(re);
        }
        errs.sort_by(|a,b| a.total_cmp(b));
        println!("sinkhorn={si:2} conf_iters={ci} parts={parts:2}: recall={hits}/{n} median={:.2} all={:?}",
            errs[errs.len()/2], errs.iter().map(|e| (e*10.0).round()/10.0).collect::<Vec<_>>());
    }
}
