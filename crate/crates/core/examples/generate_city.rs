//! Writes the procedural block city to a scene file.
//!
//! cargo run --example generate_city -- crates/core/data/city.scene

use gbt::scene::generate::{city, CityLayout};
use gbt::scene::write_scene;

fn main() -> std::io::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "city.scene".into());
    let layout = CityLayout::default();
    let geometry = city(&layout);
    let mut text = format!(
        "# block city: {0}x{0} blocks, pitch {1} m, footprint {2} m, seed {3}\n",
        layout.blocks, layout.pitch, layout.footprint, layout.seed
    );
    text.push_str(&write_scene(&geometry.triangles, &geometry.categories));
    std::fs::write(&out, text)?;
    println!("{} triangles -> {out}", geometry.triangles.len());
    Ok(())
}
