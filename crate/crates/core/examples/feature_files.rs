// Write and read patch features in the native FMAP layout and as `.npy`.

use pseudolabel::feature_io::load_feature_map_with;
use pseudolabel::{cosine_similarity, load_feature_map, write_feature_map, FeatureMap};

pub fn run_example() -> pseudolabel::Result<()> {
    let dir = tempfile::tempdir()?;
    let (h, w, dim) = (4, 5, 6);
    let data: Vec<f32> = (0..h * w * dim).map(|i| ((i * 37) % 11) as f32 - 5.0).collect();
    let fm = FeatureMap::new("street_0042", h, w, dim, 16, data)?;

    let fmap = dir.path().join("street_0042.fmap");
    write_feature_map(&fmap, &fm)?;
    let back = load_feature_map(&fmap)?;
    assert_eq!(back, fm);
    println!(
        "fmap: id {:?}, {}x{} patches of {} px, dim {}, image {}x{}, {} bytes",
        back.image_id(),
        back.grid_h(),
        back.grid_w(),
        back.patch_size(),
        back.dim(),
        back.image_width(),
        back.image_height(),
        std::fs::metadata(&fmap)?.len()
    );

    // .npy carries no id or patch size: the id comes from the file stem
    let npy = dir.path().join("street_0042.npy");
    std::fs::write(&npy, fm.to_npy_bytes())?;
    let from_npy = load_feature_map_with(&npy, 16)?;
    assert_eq!(from_npy.data(), fm.data());
    println!("npy: id {:?}, same values: {}", from_npy.image_id(), from_npy.data() == fm.data());

    let s = cosine_similarity(fm.feature(0, 0), fm.feature(0, 1))?;
    println!("cos(patch (0,0), patch (0,1)) = {s:.4}");
    match FeatureMap::from_fmap_bytes(&std::fs::read(&fmap)?[..40]) {
        Err(e) => println!("truncated file: {e}"),
        Ok(_) => unreachable!("a truncated payload is rejected"),
    }
    Ok(())
}

fn main() -> pseudolabel::Result<()> {
    run_example()
}
