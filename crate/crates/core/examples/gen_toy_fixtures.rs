//! Writes the toy backbone matrices and manifest.
//!
//! Usage: cargo run -p peo-core --example gen_toy_fixtures -- <out-dir>
//!
//! The committed fixtures were produced by this program; rerunning it must
//! reproduce them byte for byte.

use std::collections::BTreeMap;
use std::path::PathBuf;

use peo_core::toy::{
    generate_matrix, matrix_to_bytes, sha256_hex, HexU64, MatrixEntry, TextEncoderConstants,
    ToyManifest, MATRIX_GENERATOR, MATRIX_LAYOUT,
};

const DIM: usize = 16;
const SIDE: usize = 8;
const SEED: u64 = 0x7065_6f5f_746f_7931;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("crates/core/fixtures/toy/v1"));
    std::fs::create_dir_all(&out)?;

    let text_encoder = TextEncoderConstants {
        fnv_offset: HexU64(0xcbf2_9ce4_8422_2325),
        fnv_prime: HexU64(0x0000_0100_0000_01b3),
        gamma: HexU64(0x9e37_79b9_7f4a_7c15),
        mix1: HexU64(0xbf58_476d_1ce4_e5b9),
        mix2: HexU64(0x94d0_49bb_1331_11eb),
        encoder_salts: vec![HexU64(0), HexU64(0x5851_f42d_4c95_7f2d)],
    };

    let pixels = SIDE * SIDE;
    let specs = [
        ("w_gen", pixels, DIM, 1u64, 8.0),
        ("w_img", DIM, pixels, 2, 1.0),
        ("v_aes", pixels, 1, 3, 0.3),
    ];
    let mut matrices = BTreeMap::new();
    for (name, rows, cols, stream, scale) in specs {
        let values = generate_matrix(&text_encoder, SEED, stream, rows, cols, scale);
        let bytes = matrix_to_bytes(&values);
        let file = format!("{name}.bin");
        std::fs::write(out.join(&file), &bytes)?;
        matrices.insert(
            name.to_string(),
            MatrixEntry {
                file,
                rows,
                cols,
                stream,
                scale,
                sha256: sha256_hex(&bytes),
            },
        );
    }

    let manifest = ToyManifest {
        version: 1,
        dim: DIM,
        image_side: SIDE,
        layout: MATRIX_LAYOUT.into(),
        generator: MATRIX_GENERATOR.into(),
        seed: HexU64(SEED),
        matrices,
        text_encoder,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    std::fs::write(out.join("manifest.json"), json)?;
    println!("wrote toy fixtures to {}", out.display());
    Ok(())
}
