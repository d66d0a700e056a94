//! Aligns one superpixel across a five-frame window of a moving scene and
//! prints the optimal per-frame matches and the sorted candidates.
//!
//!     cargo run --release --example align_superpixel

use spac_derain::alignment::{build_buffer, build_t0, build_t1};
use spac_derain::frame_io::FrameSequence;
use spac_derain::superpixel::{extract_patch, slic_segment};
use spac_derain::synth::{render_scene, SceneParams};

fn main() -> spac_derain::Result<()> {
    let scene = SceneParams { frames: 5, velocity: (1.0, 2.0), shake: 0.0, seed: 2, ..Default::default() };
    let mut seq = FrameSequence::new(render_scene(&scene)?)?;
    seq.current = 2;
    let window = seq.window(5);
    let target = &seq.frames[2];
    let sps = slic_segment(target, 300, 10.0)?;
    let k = sps.count() / 2;
    let patch = extract_patch(&sps, target, k, 28)?;
    let buffer = build_buffer(&window, &patch, 20)?;

    println!("superpixel {k}: {} pixels, box at {:?}", patch.mask_pixels().len(), patch.origin);
    for m in build_t0(&patch, &buffer)?.provenance {
        println!("t={:+} offset ({:+}, {:+}) cost {:.5}", m.t, m.u, m.v, m.cost);
    }
    let t1 = build_t1(&patch, &buffer, &patch.mask, 10, false)?;
    t1.write_provenance_csv(k, std::io::stdout())?;
    Ok(())
}
