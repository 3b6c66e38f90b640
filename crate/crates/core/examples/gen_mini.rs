//! Regenerates the bundled eight-image mini dataset under assets/mini.

use ebmkit::io::{write_pgm, PgmDepth};
use ebmkit::synth::mini_dataset;

fn main() {
    let images = mini_dataset(8, 96, 20240901);
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/assets/mini");
    std::fs::create_dir_all(dir).unwrap();
    for (i, img) in images.iter().enumerate() {
        let path = format!("{dir}/img{i}.pgm");
        write_pgm(&path, img, PgmDepth::Eight).unwrap();
        println!("wrote {path}");
    }
}
