//! Round-trip and corruption cases shared by the format tests and the
//! acceptance run. Each case returns a description of the first failure.

use std::fs;
use std::path::Path;

use biam::data::{read_feature_store, write_feature_store, Dataset, DatasetManifest, EmbeddingTable};
use biam::model::checkpoint;
use biam::Error;

use super::{tiny_params, tiny_synthetic};

pub type Case = fn(&Path) -> Result<(), String>;

pub fn all() -> Vec<(&'static str, Case)> {
    vec![
        ("store round trip", store_round_trip),
        ("store corruption", store_corruption),
        ("checkpoint round trip", checkpoint_round_trip),
        ("checkpoint corruption", checkpoint_corruption),
        ("embeddings round trip", embeddings_round_trip),
        ("embeddings errors", embeddings_errors),
        ("manifest round trip", manifest_round_trip),
        ("manifest errors", manifest_errors),
        ("dataset cross-checks", dataset_cross_checks),
    ]
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn expect_format<T: std::fmt::Debug>(r: biam::Result<T>, offset: Option<u64>, what: &str) -> Result<(), String> {
    match r {
        Err(Error::Format { offset: at, .. }) if offset.is_none_or(|o| o == at) => Ok(()),
        other => Err(format!("{what}: expected a format error at {offset:?}, got {other:?}")),
    }
}

pub fn store_round_trip(dir: &Path) -> Result<(), String> {
    let store = tiny_synthetic().store;
    let path = dir.join("rt.brf");
    write_feature_store(&store, &path).map_err(|e| e.to_string())?;
    let back = read_feature_store(&path).map_err(|e| e.to_string())?;
    ensure(back.records() == store.records(), "records differ after reading back")?;
    ensure(fs::read(&path).unwrap() == back.encode().unwrap(), "re-encoding changes bytes")
}

pub fn store_corruption(dir: &Path) -> Result<(), String> {
    let bytes = tiny_synthetic().store.encode().unwrap();
    let path = dir.join("bad.brf");
    let mut bad = bytes.clone();
    bad[1] = b'?';
    fs::write(&path, &bad).unwrap();
    expect_format(read_feature_store(&path), Some(0), "bad magic")?;
    let mut bad = bytes.clone();
    bad[4] = 9;
    fs::write(&path, &bad).unwrap();
    expect_format(read_feature_store(&path), Some(4), "bad version")?;
    for cut in [3, 20, 29, bytes.len() / 2, bytes.len() - 1] {
        fs::write(&path, &bytes[..cut]).unwrap();
        expect_format(read_feature_store(&path), None, &format!("truncated to {cut} bytes"))?;
    }
    let mut long = bytes.clone();
    long.push(0);
    fs::write(&path, &long).unwrap();
    expect_format(read_feature_store(&path), Some(bytes.len() as u64), "trailing byte")?;
    let mut nan = bytes.clone();
    let at = 28 + 4 + "img00000".len();
    nan[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    fs::write(&path, &nan).unwrap();
    expect_format(read_feature_store(&path), Some(at as u64), "non-finite value")?;
    match read_feature_store(&dir.join("missing.brf")) {
        Err(Error::Io { .. }) => Ok(()),
        other => Err(format!("missing file: {other:?}")),
    }
}

pub fn checkpoint_round_trip(dir: &Path) -> Result<(), String> {
    let params = tiny_params(5);
    let path = dir.join("model.ckpt");
    checkpoint::save(&params, &path).map_err(|e| e.to_string())?;
    let back = checkpoint::load(&path).map_err(|e| e.to_string())?;
    ensure(back == params, "checkpoint differs after reading back")?;
    ensure(fs::read(&path).unwrap() == checkpoint::encode(&back).unwrap(), "re-encoding changes bytes")
}

pub fn checkpoint_corruption(dir: &Path) -> Result<(), String> {
    let bytes = checkpoint::encode(&tiny_params(5)).unwrap();
    let path = dir.join("bad.ckpt");
    let mut bad = bytes.clone();
    bad[0] = 0;
    fs::write(&path, &bad).unwrap();
    expect_format(checkpoint::load(&path), Some(0), "bad magic")?;
    for cut in [2, 10, 46, bytes.len() - 4] {
        fs::write(&path, &bytes[..cut]).unwrap();
        expect_format(checkpoint::load(&path), None, &format!("truncated to {cut} bytes"))?;
    }
    let mut long = bytes.clone();
    long.extend_from_slice(&[1, 2]);
    fs::write(&path, &long).unwrap();
    expect_format(checkpoint::load(&path), None, "trailing bytes")
}

pub fn embeddings_round_trip(dir: &Path) -> Result<(), String> {
    let table = tiny_synthetic().embeddings;
    let path = dir.join("emb.txt");
    table.write(&path).map_err(|e| e.to_string())?;
    let back = EmbeddingTable::read(&path).map_err(|e| e.to_string())?;
    ensure(back == table, "embedding table differs after reading back")
}

pub fn embeddings_errors(dir: &Path) -> Result<(), String> {
    let path = dir.join("bad_emb.txt");
    let cases = [
        ("cat 1 2\ndog 1 2 3\n", "ragged dimensions"),
        ("cat 1 2\ncat 3 4\n", "duplicate name"),
        ("cat 1 x\n", "non-numeric value"),
        ("cat 0 0\n", "zero vector"),
    ];
    for (text, what) in cases {
        fs::write(&path, text).unwrap();
        let r = EmbeddingTable::read(&path).and_then(|t| t.select(&["cat".to_string()]));
        match r {
            Err(Error::Embedding(_)) | Err(Error::Format { .. }) => {}
            other => return Err(format!("{what}: {other:?}")),
        }
    }
    fs::write(&path, "cat 3 4\n").unwrap();
    let names = ["cat".to_string(), "emu".to_string(), "yak".to_string()];
    match EmbeddingTable::read(&path).unwrap().select(&names) {
        Err(Error::Embedding(m)) if m.contains("emu") && m.contains("yak") => Ok(()),
        other => Err(format!("missing classes not listed: {other:?}")),
    }
}

pub fn manifest_round_trip(dir: &Path) -> Result<(), String> {
    let manifest = tiny_synthetic().manifest;
    let path = dir.join("m.json");
    manifest.save(&path).map_err(|e| e.to_string())?;
    let back = DatasetManifest::load(&path).map_err(|e| e.to_string())?;
    ensure(back == manifest, "manifest differs after reading back")?;
    ensure(fs::read_to_string(&path).unwrap() == back.to_json(), "re-serializing changes text")
}

pub fn manifest_errors(dir: &Path) -> Result<(), String> {
    let path = dir.join("bad.json");
    let good = tiny_synthetic().manifest.to_json();
    fs::write(&path, &good[..good.len() / 2]).unwrap();
    if !matches!(DatasetManifest::load(&path), Err(Error::Json { .. })) {
        return Err("truncated manifest is not a JSON error".into());
    }
    fs::write(&path, good.replacen("\"features\"", "\"feature_file\"", 1)).unwrap();
    if !matches!(DatasetManifest::load(&path), Err(Error::Json { .. })) {
        return Err("unknown key is not a JSON error".into());
    }
    let mut m = tiny_synthetic().manifest;
    m.labels.insert("img00001".into(), vec![99]);
    m.save(&path).unwrap();
    match DatasetManifest::load(&path) {
        Err(Error::Dataset { image_id, .. }) if image_id == "img00001" => Ok(()),
        other => Err(format!("out-of-range label: {other:?}")),
    }
}

pub fn dataset_cross_checks(dir: &Path) -> Result<(), String> {
    let data = tiny_synthetic();
    let manifest_path = data.write(dir).map_err(|e| e.to_string())?;
    let loaded = Dataset::load(&manifest_path).map_err(|e| e.to_string())?;
    ensure(loaded.store.records() == data.store.records(), "store differs after loading")?;

    let mut m = data.manifest.clone();
    m.labels.insert("ghost".into(), vec![0]);
    m.splits.insert("ghost".into(), biam::data::Split::Train);
    m.save(&manifest_path).unwrap();
    match Dataset::load(&manifest_path) {
        Err(Error::Dataset { image_id, .. }) if image_id == "ghost" => {}
        other => return Err(format!("image missing from store: {other:?}")),
    }
    let mut cfg = super::tiny_model(0);
    cfg.d_r += 2;
    cfg.heads = 2;
    match data.store.geometry().check_model(&cfg) {
        Err(Error::Dimension(_)) => Ok(()),
        other => Err(format!("geometry mismatch: {other:?}")),
    }
}
