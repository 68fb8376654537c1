//! Writes a synthetic taxonomy and corpus: `synth_fixture <dir> [noise] [seed]`.

use std::path::PathBuf;

use cwetrace::ingest::write_cve_corpus;
use cwetrace::synth::{generate, SynthConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().expect("usage: synth_fixture <dir> [noise] [seed]"));
    let noise = args.next().map_or(0.15, |s| s.parse().expect("noise"));
    let seed = args.next().map_or(7, |s| s.parse().expect("seed"));
    let data = generate(&SynthConfig {
        noise,
        seed,
        ..SynthConfig::default()
    })
    .expect("generate");
    std::fs::create_dir_all(&dir).expect("create dir");
    std::fs::write(dir.join("taxonomy.json"), data.taxonomy.to_json()).expect("write taxonomy");
    write_cve_corpus(&data.corpus, dir.join("corpus.jsonl")).expect("write corpus");
    println!("{} classes, {} records", data.taxonomy.len(), data.corpus.len());
}
