//! Trains the planar pair on the six-blob domain and prints the metrics
//! and a coarse class map (`.` marks the unknown class).
//!
//!     cargo run --release --example dummy_domain -- [seed]

use open_sslac::dataset::make_dummy_domain;
use open_sslac::eval::{boundary_raster, evaluate, Bounds};
use open_sslac::trainer::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let (domain, split) = make_dummy_domain(seed, 500);
    let mut out = train(&split, &TrainConfig::dummy(seed))?;
    let probes = vec![("open_probes".to_string(), domain.open_probe_points.clone())];
    let report = evaluate(&mut out.discriminator, &split, &probes, seed)?;
    print!("{}", report.summary());

    let raster = boundary_raster(&mut out.discriminator, &Bounds::square(domain.extent()), 48)?;
    for row in raster.cells.chunks(raster.resolution).step_by(2) {
        let line: String = row
            .iter()
            .map(|&c| if c == raster.k + 1 { '.' } else { char::from(b'0' + c as u8) })
            .collect();
        println!("{line}");
    }
    Ok(())
}
