//! Netpbm interoperability against files written by an independent encoder
//! (Pillow), plus checkpoint and corpus regeneration round trips.

use std::fs;
use std::path::{Path, PathBuf};

use mswt::data::netpbm::{encode_pgm, encode_ppm};
use mswt::data::{make_corpus, read_pgm, read_ppm, read_spec, write_corpus, CorpusSpec, Dataset, Split};
use mswt::model::{load_checkpoint, save_checkpoint, ModelConfig, MswtModel};
use mswt::Tensor;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures").join(name)
}

#[test]
fn reads_pillow_ppm() {
    let img = read_ppm(&fixture("pil_rgb_5x4.ppm")).unwrap();
    assert_eq!(img.shape(), &[3, 4, 5]);
    for c in 0..3 {
        for y in 0..4 {
            for x in 0..5 {
                let expect = ((x * 37 + y * 11 + c * 83) % 256) as f64 / 255.0;
                assert_eq!(img.data()[(c * 4 + y) * 5 + x], expect, "pixel c{c} y{y} x{x}");
            }
        }
    }
}

#[test]
fn reads_pillow_pgm() {
    let img = read_pgm(&fixture("pil_gray_5x4.pgm")).unwrap();
    assert_eq!(img.shape(), &[4, 5]);
    for y in 0..4 {
        for x in 0..5 {
            assert_eq!(img.data()[y * 5 + x], ((x * 53 + y * 29) % 256) as f64 / 255.0);
        }
    }
}

#[test]
fn encoder_matches_pillow_bytes() {
    for (name, ppm) in [("pil_rgb_5x4.ppm", true), ("pil_gray_5x4.pgm", false)] {
        let bytes = fs::read(fixture(name)).unwrap();
        let ours = if ppm {
            encode_ppm(&read_ppm(&fixture(name)).unwrap()).unwrap()
        } else {
            encode_pgm(&read_pgm(&fixture(name)).unwrap()).unwrap()
        };
        assert_eq!(ours, bytes, "{name}");
    }
}

#[test]
fn checkpoint_resave_is_byte_identical_and_predicts_alike() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig { image_size: 16, widths: [4, 6, 8, 8], dims: [4, 6, 8], heads: [1, 2, 2], ..ModelConfig::default() };
    let mut model = MswtModel::new(cfg, 4).unwrap();
    let images = Tensor::from_vec((0..2 * 3 * 256).map(|i| ((i * 7919) % 256) as f64 / 255.0).collect(), &[2, 3, 16, 16]).unwrap();
    model.update_batchnorm_stats(&images).unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    save_checkpoint(&model, &a).unwrap();
    let mut loaded = load_checkpoint(&a).unwrap();
    save_checkpoint(&loaded, &b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(loaded.config, model.config);
    assert_eq!(loaded.predict(&images).unwrap().logits, model.predict(&images).unwrap().logits);
}

#[test]
fn corpus_on_disk_matches_memory_and_regenerates() {
    let dir = tempfile::tempdir().unwrap();
    let spec = CorpusSpec { seed: 3, train: 6, val: 2, test: 4, size: 16, strength: 2.0, ..CorpusSpec::default() };
    write_corpus(&spec, dir.path()).unwrap();
    assert_eq!(read_spec(dir.path()).unwrap(), spec);
    let memory = make_corpus(&spec).unwrap();
    for split in Split::ALL {
        let disk = Dataset::load(dir.path(), split).unwrap();
        let mem = Dataset::from_samples(memory.split(split)).unwrap();
        assert_eq!(disk.images, mem.images);
        assert_eq!(disk.labels, mem.labels);
        assert_eq!(disk.video_ids, mem.video_ids);
    }
    let again = tempfile::tempdir().unwrap();
    write_corpus(&read_spec(dir.path()).unwrap(), again.path()).unwrap();
    for split in Split::ALL {
        let name = format!("{split}.csv");
        assert_eq!(fs::read(dir.path().join(&name)).unwrap(), fs::read(again.path().join(&name)).unwrap());
        for entry in fs::read_dir(dir.path().join(split.name())).unwrap() {
            let p = entry.unwrap().path();
            let q = again.path().join(split.name()).join(p.file_name().unwrap());
            assert_eq!(fs::read(&p).unwrap(), fs::read(&q).unwrap(), "{}", p.display());
        }
    }
}
