//! Bundle persistence: a directory with a plain-text manifest and one
//! flat binary array file per parameter tensor.
//!
//! Array files carry a single ASCII header line `f64le <rows> <cols>`
//! followed by row-major little-endian 64-bit floats; vectors use
//! `cols = 1`. Round trips are bit-exact.

use super::{MlpSpec, PairBundle, PairEntry};
use crate::bsc::BitFlipSet;
use crate::error::{Error, Result};
use crate::nn::{Activation, Dense, Mlp};
use crate::quantizer::QuantizerSpec;
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

/// Format tag written to and required in the manifest.
pub const BUNDLE_FORMAT: &str = "blindsc-bundle-v1";

impl PairBundle {
    /// Write the bundle to `dir` (created if missing).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        manifest.push_str(&format!("format = {BUNDLE_FORMAT}\n"));
        manifest.push_str(&format!("input_dim = {}\n", self.mlp.input_dim));
        manifest.push_str(&format!("feature_dim = {}\n", self.mlp.feature_dim));
        manifest.push_str(&format!("enc_hidden = {}\n", join_usizes(&self.mlp.enc_hidden)));
        manifest.push_str(&format!("dec_hidden = {}\n", join_usizes(&self.mlp.dec_hidden)));
        manifest.push_str(&format!("quant_bits = {}\n", self.quantizer.bits()));
        manifest.push_str(&format!("quant_vmin = {}\n", self.quantizer.v_min()));
        manifest.push_str(&format!("quant_vmax = {}\n", self.quantizer.v_max()));
        manifest.push_str(&format!("tau = {}\n", self.tau));
        manifest.push_str(&format!("seed = {}\n", self.seed));
        manifest.push_str(&format!("entries = {}\n", self.entries.len()));
        let lambdas: Vec<String> = self.entries.iter().map(|e| e.lambda.to_string()).collect();
        manifest.push_str(&format!("lambdas = {}\n", lambdas.join(",")));
        fs::write(dir.join("manifest.txt"), manifest)?;

        for (k, entry) in self.entries.iter().enumerate() {
            let entry_dir = dir.join(format!("entry_{k:03}"));
            fs::create_dir_all(&entry_dir)?;
            save_mlp(&entry_dir, "encoder", &entry.encoder)?;
            save_mlp(&entry_dir, "decoder", &entry.decoder)?;
            write_array(
                &entry_dir.join("mu.bin"),
                entry.mu.values(),
                entry.mu.len(),
                1,
            )?;
        }
        Ok(())
    }

    /// Read a bundle previously written by [`PairBundle::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = parse_manifest(&dir.join("manifest.txt"))?;
        let format = manifest_str(&manifest, "format")?;
        if format != BUNDLE_FORMAT {
            return Err(Error::BundleFormat(format!(
                "unsupported format `{format}`, expected `{BUNDLE_FORMAT}`"
            )));
        }
        let mlp = MlpSpec {
            input_dim: manifest_parse(&manifest, "input_dim")?,
            feature_dim: manifest_parse(&manifest, "feature_dim")?,
            enc_hidden: parse_usizes(manifest_str(&manifest, "enc_hidden")?)?,
            dec_hidden: parse_usizes(manifest_str(&manifest, "dec_hidden")?)?,
        };
        let quantizer = QuantizerSpec::new(
            manifest_parse(&manifest, "quant_bits")?,
            manifest_parse(&manifest, "quant_vmin")?,
            manifest_parse(&manifest, "quant_vmax")?,
        )?;
        let tau: f64 = manifest_parse(&manifest, "tau")?;
        let seed: u64 = manifest_parse(&manifest, "seed")?;
        let count: usize = manifest_parse(&manifest, "entries")?;
        let lambdas: Vec<f64> = manifest_str(&manifest, "lambdas")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::BundleFormat(format!("lambda `{s}`: {e}")))
            })
            .collect::<Result<_>>()?;
        if lambdas.len() != count {
            return Err(Error::BundleFormat(format!(
                "{count} entries but {} lambdas",
                lambdas.len()
            )));
        }

        let nb = mlp.feature_dim * quantizer.bits() as usize;
        let mut entries = Vec::with_capacity(count);
        for (k, &lambda) in lambdas.iter().enumerate() {
            let entry_dir = dir.join(format!("entry_{k:03}"));
            let encoder = load_mlp(
                &entry_dir,
                "encoder",
                &mlp.encoder_widths(),
                Activation::Relu6,
            )?;
            let decoder = load_mlp(
                &entry_dir,
                "decoder",
                &mlp.decoder_widths(),
                Activation::Identity,
            )?;
            let (mu_values, rows, cols) = read_array(&entry_dir.join("mu.bin"))?;
            if rows != nb || cols != 1 {
                return Err(Error::BundleFormat(format!(
                    "mu array is {rows}x{cols}, expected {nb}x1"
                )));
            }
            entries.push(PairEntry {
                lambda,
                encoder,
                decoder,
                mu: BitFlipSet::new(mu_values)?,
            });
        }
        Ok(PairBundle {
            mlp,
            quantizer,
            tau,
            seed,
            entries,
        })
    }
}

fn join_usizes(values: &[usize]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_usizes(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| Error::BundleFormat(format!("width `{s}`: {e}")))
        })
        .collect()
}

fn parse_manifest(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::BundleFormat(format!("manifest line `{line}`")))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn manifest_str<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::BundleFormat(format!("manifest missing `{key}`")))
}

fn manifest_parse<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    manifest_str(map, key)?
        .parse::<T>()
        .map_err(|e| Error::BundleFormat(format!("manifest `{key}`: {e}")))
}

fn save_mlp(dir: &Path, prefix: &str, mlp: &Mlp) -> Result<()> {
    for (i, layer) in mlp.layers.iter().enumerate() {
        write_array(
            &dir.join(format!("{prefix}_w{i}.bin")),
            &layer.weights,
            layer.rows,
            layer.cols,
        )?;
        write_array(
            &dir.join(format!("{prefix}_b{i}.bin")),
            &layer.biases,
            layer.rows,
            1,
        )?;
    }
    Ok(())
}

fn load_mlp(dir: &Path, prefix: &str, widths: &[usize], output: Activation) -> Result<Mlp> {
    let acts = MlpSpec::activations(widths, output);
    let mut layers = Vec::with_capacity(widths.len() - 1);
    for i in 0..widths.len() - 1 {
        let (rows, cols) = (widths[i + 1], widths[i]);
        let (weights, got_rows, got_cols) = read_array(&dir.join(format!("{prefix}_w{i}.bin")))?;
        if (got_rows, got_cols) != (rows, cols) {
            return Err(Error::BundleFormat(format!(
                "{prefix}_w{i} is {got_rows}x{got_cols}, expected {rows}x{cols}"
            )));
        }
        let (biases, got_rows, got_cols) = read_array(&dir.join(format!("{prefix}_b{i}.bin")))?;
        if (got_rows, got_cols) != (rows, 1) {
            return Err(Error::BundleFormat(format!(
                "{prefix}_b{i} is {got_rows}x{got_cols}, expected {rows}x1"
            )));
        }
        layers.push(Dense {
            weights,
            biases,
            rows,
            cols,
            activation: acts[i],
        });
    }
    Ok(Mlp { layers })
}

fn write_array(path: &Path, values: &[f64], rows: usize, cols: usize) -> Result<()> {
    debug_assert_eq!(values.len(), rows * cols);
    let mut file = fs::File::create(path)?;
    writeln!(file, "f64le {rows} {cols}")?;
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&bytes)?;
    Ok(())
}

fn read_array(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let mut parts = header.split_whitespace();
    let tag = parts.next().unwrap_or("");
    if tag != "f64le" {
        return Err(Error::BundleFormat(format!(
            "{}: bad array header `{}`",
            path.display(),
            header.trim()
        )));
    }
    let rows: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::BundleFormat(format!("{}: bad rows", path.display())))?;
    let cols: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::BundleFormat(format!("{}: bad cols", path.display())))?;
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != rows * cols * 8 {
        return Err(Error::BundleFormat(format!(
            "{}: expected {} bytes of data, got {}",
            path.display(),
            rows * cols * 8,
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((values, rows, cols))
}

#[cfg(test)]
mod tests {
    use super::super::{train_ladder, TrainConfig};
    use super::*;

    fn tiny_bundle() -> PairBundle {
        let data = crate::dataset::toy_patterns(6, 9);
        let mut config = TrainConfig::toy_default();
        config.epochs = 1;
        config.lambda_ladder = vec![1e-4];
        config.mlp.enc_hidden = vec![6];
        config.mlp.dec_hidden = vec![6];
        config.mlp.feature_dim = 4;
        train_ladder(&data, &config).unwrap().0
    }

    fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in fs::read_dir(&d).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    let rel = path.strip_prefix(dir).unwrap().to_string_lossy().to_string();
                    out.push((rel, fs::read(&path).unwrap()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let bundle = tiny_bundle();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        bundle.save(dir_a.path()).unwrap();
        let loaded = PairBundle::load(dir_a.path()).unwrap();
        loaded.save(dir_b.path()).unwrap();
        assert_eq!(dir_bytes(dir_a.path()), dir_bytes(dir_b.path()));
        assert_eq!(loaded.entries[0].mu.values(), bundle.entries[0].mu.values());
        assert_eq!(
            loaded.entries[0].encoder.layers[0].weights,
            bundle.entries[0].encoder.layers[0].weights
        );
        assert_eq!(loaded.tau, bundle.tau);
    }

    #[test]
    fn load_rejects_bad_format() {
        let bundle = tiny_bundle();
        let dir = tempfile::tempdir().unwrap();
        bundle.save(dir.path()).unwrap();
        let manifest = dir.path().join("manifest.txt");
        let text = fs::read_to_string(&manifest).unwrap();
        fs::write(&manifest, text.replace(BUNDLE_FORMAT, "other-v9")).unwrap();
        assert!(matches!(
            PairBundle::load(dir.path()),
            Err(Error::BundleFormat(_))
        ));
    }

    #[test]
    fn load_rejects_truncated_array() {
        let bundle = tiny_bundle();
        let dir = tempfile::tempdir().unwrap();
        bundle.save(dir.path()).unwrap();
        let mu = dir.path().join("entry_000").join("mu.bin");
        let bytes = fs::read(&mu).unwrap();
        fs::write(&mu, &bytes[..bytes.len() - 4]).unwrap();
        assert!(PairBundle::load(dir.path()).is_err());
    }
}
