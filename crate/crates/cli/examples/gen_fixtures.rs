//! Regenerates the bundled synthetic example under `fixtures/`.
//!
//! Usage: cargo run --example gen_fixtures [out_dir]

use std::path::PathBuf;

use fingerprint_cli::formats::write_field_file;
use fingerprint_core::laplacian::{compute_laplacian_basis, KernelVariant};
use fingerprint_core::synth::{
    generate_synthetic_world, power_law_spectrum, smooth_forced_field, SyntheticWorldSpec,
};
use fingerprint_core::Grid;

fn main() {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| PathBuf::from("crates/cli/fixtures"));
    std::fs::create_dir_all(&out).expect("create fixtures dir");

    let grid = Grid::build(6, 12).unwrap();
    let basis = compute_laplacian_basis(&grid, KernelVariant::HalfAngleSin2).unwrap();
    let spectrum = power_law_spectrum(20, 1.0, 1.5).unwrap();
    let forced = smooth_forced_field(&basis, 3.0, 5).unwrap();

    let spec = SyntheticWorldSpec {
        grid: grid.clone(),
        true_spectrum: spectrum,
        true_forced_field: forced,
        n_control: 25,
        n_forced: 6,
        seed: 2024,
    };
    let (control, historical) = generate_synthetic_world(&spec, &basis, "synthA").unwrap();

    let prov = "generator=gen_fixtures seed=2024";
    let ctl_blocks: Vec<(&str, &str, &[f64])> = control
        .fields()
        .iter()
        .map(|f| ("control", "synthA", f.values()))
        .collect();
    write_field_file(&out.join("control_synthA.txt"), &grid, &ctl_blocks, prov).unwrap();

    let hist_blocks: Vec<(&str, &str, &[f64])> = historical
        .iter()
        .map(|f| ("historical", "synthA", f.values()))
        .collect();
    write_field_file(&out.join("historical_synthA.txt"), &grid, &hist_blocks, prov).unwrap();

    // the first historical member doubles as the pseudo-observation
    write_field_file(
        &out.join("observation.txt"),
        &grid,
        &[("observation", "pseudo", historical[0].values())],
        prov,
    )
    .unwrap();

    let manifest = r#"[grid]
n_lat = 6
n_lon = 12

[options]
basis = "laplace"
likelihood = "chi2"
area_weighting = false
m = 800
burn_in = 400
seed = 7
credible_level = 0.90

[[dataset]]
role = "control"
path = "control_synthA.txt"
model_id = "synthA"

[[dataset]]
role = "historical"
path = "historical_synthA.txt"
model_id = "synthA"

[[dataset]]
role = "observation"
path = "observation.txt"
model_id = "pseudo"
"#;
    std::fs::write(out.join("manifest.toml"), manifest).unwrap();
    println!("fixtures written to {}", out.display());
}
