//! Writes a rendered sample in every supported format and reads it back.

use sceneflow::io::{
    read_flo, read_kitti_disp_png, read_kitti_flow_png, read_pfm, read_state_dir, write_flo, write_kitti_disp_png,
    write_kitti_flow_png, write_pfm, write_sample_dir,
};
use sceneflow::synth::{make_dataset, DatasetConfig};

fn main() -> sceneflow::Result<()> {
    let mut s = make_dataset(1, &DatasetConfig::default().with_size(48, 32), 1)?.remove(0);
    // the float formats store f32, so start from values they can hold exactly
    let f32_exact = |f: &sceneflow::fields::ImageField| f.map(|v| v as f32 as f64);
    s.gt.d1 = f32_exact(&s.gt.d1);
    s.gt.d2 = f32_exact(&s.gt.d2);
    s.gt.flow = f32_exact(&s.gt.flow);
    s.gt.dchange = f32_exact(&s.gt.dchange);
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);

    write_pfm(p("d1.pfm"), &s.gt.d1)?;
    println!("pfm  exact: {}", read_pfm(p("d1.pfm"))? == s.gt.d1);

    write_flo(p("flow.flo"), &s.gt.flow)?;
    println!("flo  exact: {}", read_flo(p("flow.flo"))? == s.gt.flow);

    // KITTI PNGs quantize to 1/256 px (disparity) and 1/64 px (flow)
    write_kitti_disp_png(p("disp.png"), &s.gt.d1, &s.valid)?;
    let (d, _) = read_kitti_disp_png(p("disp.png"))?;
    let err = d.data().iter().zip(s.gt.d1.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("kitti disparity max error {err:.5}");

    write_kitti_flow_png(p("flow.png"), &s.gt.flow, &s.valid)?;
    let (f, valid) = read_kitti_flow_png(p("flow.png"))?;
    let err = f.data().iter().zip(s.gt.flow.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("kitti flow max error {err:.5}, {} valid", valid.count());

    write_sample_dir(p("sample"), &s)?;
    println!("sample dir round trip: {}", read_state_dir(p("sample"))? == s.gt);
    Ok(())
}
