//! Generate a synthetic corpus and a seed-initialized weight store, so the
//! whole pipeline can be exercised without the real dataset:
//!
//! ```sh
//! cargo run --release -p crackbench-core --example synth_fixtures -- demo 50
//! crackbench split --root demo/corpus --out demo/split.json
//! ```

use std::path::Path;

use crackbench_core::model::{write_initialized_checkpoint, BackboneName};
use crackbench_core::synth::{synth_wall, write_synth_corpus};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let base = args.get(1).map(String::as_str).unwrap_or("demo");
    let n_per_class: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(50);
    let base = Path::new(base);

    let corpus = base.join("corpus");
    write_synth_corpus(&corpus, n_per_class, 227, 1).expect("corpus written");
    println!("corpus: {} ({n_per_class} patches per class)", corpus.display());

    let store = base.join("weights");
    for name in BackboneName::all() {
        write_initialized_checkpoint(&store, name, 1).expect("checkpoint written");
    }
    println!("weight store: {}", store.display());

    let wall = synth_wall(800, 1000, true, 7);
    let wall_path = base.join("wall.png");
    image::RgbImage::from_raw(wall.width as u32, wall.height as u32, wall.pixels.clone())
        .unwrap()
        .save(&wall_path)
        .expect("wall image written");
    println!("large test image: {}", wall_path.display());
}
