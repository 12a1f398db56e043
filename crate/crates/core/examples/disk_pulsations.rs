//! Locating two oscillating sources on a disk whose frequencies change
//! halfway through the record.
//!
//! Run with `cargo run --release --example disk_pulsations [seed]`.

use resonator::scenarios::{disk_scenario, localize_sources, DiskSettings};

fn main() -> resonator::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let settings = DiskSettings::default();
    let scenario = disk_scenario(&settings, seed)?;
    println!(
        "{} pixels x {} frames, {} modes, {} components",
        scenario.data.steps[0].locations.len(),
        scenario.data.steps.len(),
        settings.modes,
        scenario.model.components.len()
    );
    let started = std::time::Instant::now();
    let (points, found) = localize_sources(&scenario, 21)?;
    println!("smoothing took {:.2?}", started.elapsed());
    for (src, loc) in scenario.sources.iter().zip(&found) {
        println!(
            "{:.2}->{:.2} Hz source at ({:+.2}, {:+.2}): map peaks at ({:+.2}, {:+.2}), {:.2} cells off",
            src.hz.0, src.hz.1, loc.center.x, loc.center.y, loc.peak.x, loc.peak.y, loc.cells_off
        );
    }
    // Coarse text rendering of the first map; rows run from y = -1 at the
    // top to y = 1 at the bottom.
    let map = &found[0].map;
    let max = map.iter().cloned().fold(0.0, f64::max);
    let shades = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];
    let mut row = String::new();
    let mut last_y = points[0].y;
    for (p, v) in points.iter().zip(map) {
        if p.y != last_y {
            println!("{row}");
            row.clear();
            last_y = p.y;
        }
        let pad = ((p.x + 1.0) / found[0].cell).round() as usize;
        while row.chars().count() < 2 * pad {
            row.push(' ');
        }
        let i = ((v / max) * 9.0).round() as usize;
        row.push(shades[i.min(9)]);
        row.push(' ');
    }
    println!("{row}");
    Ok(())
}
