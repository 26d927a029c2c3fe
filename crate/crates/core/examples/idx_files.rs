//! Writing and reading IDX image/label pairs. Point `DPDR_MNIST_DIR` at a
//! directory holding the MNIST training files to load the real thing.

use std::path::PathBuf;

use dpdr::data::{load_idx_pair, write_idx_pair};
use dpdr::experiment::{IDX_IMAGES, IDX_LABELS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("dpdr-idx-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let (images, labels) = (dir.join("images"), dir.join("labels"));
    let pixels: Vec<u8> = (0..3 * 4).map(|i| (i * 20) as u8).collect();
    write_idx_pair(&images, &labels, 2, 2, &pixels, &[4, 2, 9])?;

    let ds = load_idx_pair(&images, &labels, None)?;
    println!("{} images of {} pixels, labels {:?}", ds.len(), ds.d_in, ds.labels);
    println!("first image scaled to [0, 1]: {:?}", ds.inputs[0]);

    match load_idx_pair(&labels, &images, None) {
        Err(e) => println!("swapped files: {e}"),
        Ok(_) => println!("swapped files unexpectedly parsed"),
    }
    let _ = std::fs::remove_dir_all(&dir);

    if let Some(mnist) = std::env::var_os("DPDR_MNIST_DIR").map(PathBuf::from) {
        let ds = load_idx_pair(&mnist.join(IDX_IMAGES), &mnist.join(IDX_LABELS), Some(1000))?;
        println!("MNIST: {} examples, d_in {}", ds.len(), ds.d_in);
    }
    Ok(())
}
