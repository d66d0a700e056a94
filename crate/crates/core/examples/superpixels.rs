//! Segments a frame into superpixels and writes a false-colour label map.
//!
//!     cargo run --release --example superpixels -- [frame.png] [count]

use spac_derain::frame_io::load_frame;
use spac_derain::superpixel::{label_map_image, slic_segment, DEFAULT_COMPACTNESS};
use spac_derain::synth::{render_scene, SceneParams};

fn main() -> spac_derain::Result<()> {
    let mut args = std::env::args().skip(1);
    let frame = match args.next() {
        Some(p) => load_frame(p.as_ref())?,
        None => render_scene(&SceneParams { frames: 1, ..Default::default() })?.remove(0),
    };
    let count = args.next().and_then(|c| c.parse().ok()).unwrap_or(300);
    let sps = slic_segment(&frame, count, DEFAULT_COMPACTNESS)?;
    let areas: Vec<usize> = sps.pixels.iter().map(Vec::len).collect();
    println!(
        "{} superpixels (asked {count}), grid step {:.1}, area {}..{}",
        sps.count(),
        sps.grid_step,
        areas.iter().min().unwrap(),
        areas.iter().max().unwrap()
    );
    label_map_image(&sps).save("superpixels.png").expect("write superpixels.png");
    Ok(())
}
