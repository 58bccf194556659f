use homlab::corrector::{analytic_mu, compute_w, compute_z, mu_density, sandwich_violation};
use homlab::domain::{build_mesh, LatticeSpec, MeshParams};
use homlab::fem::{seminorm_h1, CoefficientField};

fn main() {
    let mu_star = analytic_mu(2, 1.0).unwrap();
    println!("analytic mu = {mu_star:.6}");
    for eps in [0.5, 1.0 / 3.0, 0.25] {
        let spec = LatticeSpec::unit_square(eps, 1.0).unwrap();
        let t0 = std::time::Instant::now();
        let mesh = build_mesh(&spec, &MeshParams::default()).unwrap();
        let a = CoefficientField::identity(&mesh);
        let w = compute_w(&mesh, &spec, &a).unwrap();
        let d = mu_density(&w, &mesh, &a).unwrap();
        let z = compute_z(&mesh, &w, &a).unwrap();
        let (min_z, max_ex) = sandwich_violation(&w, &z);
        let zw = homlab::fem::FeFunction {
            values: z.z.values.iter().zip(&w.w.values).map(|(a, b)| a - b).collect(),
        };
        let zw_h1 = seminorm_h1(&mesh, &zw).unwrap();
        let mean = d.interior_mean();
        let dev = (mean - mu_star).abs() / mu_star;
        println!(
            "eps={eps:.4} nv={} nt={} holes={} mean_density={mean:.5} dev={:.3}% z_min={min_z:.2e} z_excess={max_ex:.2e} |z-w|_H1={zw_h1:.3e} t={:?}",
            mesh.n_vertices(),
            mesh.n_triangles(),
            mesh.holes.len(),
            100.0 * dev,
            t0.elapsed()
        );
    }
}
