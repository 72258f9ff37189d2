use sceneflow::synth::{generate, DisparityPlane, LayerMotion, SceneSpec};

fn main() -> sceneflow::Result<()> {
    // a single textured plane 6px away in disparity, drifting right by 2px
    let spec = SceneSpec::single_plane(
        64,
        48,
        DisparityPlane::constant(6.0),
        LayerMotion {
            shift_x: 2.0,
            shift_y: 0.0,
            ddisp: 0.5,
        },
        42,
    );
    let s = generate(&spec, 0)?;
    let (w, h) = s.gt.extent();
    println!("{w}x{h}, d1 {:.2}, d2 {:.2}, flow ({:.2}, {:.2}), dchange {:.2}", s.gt.d1.get(0, 10, 10), s.gt.d2.get(0, 10, 10), s.gt.flow.get(0, 10, 10), s.gt.flow.get(1, 10, 10), s.gt.dchange.get(0, 10, 10));
    println!("visible in frame 2: {} of {} pixels", s.occlusion.count(), w * h);
    println!("seen by the right camera: {}", s.stereo_visible.count());
    Ok(())
}
