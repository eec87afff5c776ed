//! Regenerates the bundled test corpus under `tests/fixtures/corpus50`.
//!
//! Each image is a flat background with one colored square. Scripted REC
//! generations locate that square; a handful are deliberately broken so the
//! parse and generation error paths get exercised.
//!
//!     cargo run -p vlgen-core --example make_fixture [OUT_DIR]

use std::fmt::Write as _;
use std::path::PathBuf;

use image::{Rgb, RgbImage};
use vlgen_core::genharness::ScriptEntry;
use vlgen_core::ingest::build_manifest;
use vlgen_core::io::write_jsonl;
use vlgen_core::rng::SplitMix64;
use vlgen_core::schema::{serialize_box, RegionBox};
use vlgen_core::stats::{CorpusStats, StatsDocument};

const COLORS: [(&str, [u8; 3], f64); 5] = [
    ("red", [220, 30, 30], 0.32),
    ("green", [30, 180, 60], 0.15),
    ("blue", [40, 60, 220], 0.24),
    ("yellow", [230, 210, 40], 0.45),
    ("white", [250, 250, 250], 0.05),
];

fn main() -> anyhow::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/corpus50"));
    let images = out.join("images");
    std::fs::create_dir_all(&images)?;

    let (w, h) = (64u32, 48u32);
    let mut rng = SplitMix64::new(50);
    let mut script = Vec::new();
    for i in 0..50 {
        let bg = [
            40 + rng.below(60) as u8,
            40 + rng.below(60) as u8,
            40 + rng.below(60) as u8,
        ];
        let (name, rgb, _) = COLORS[rng.below(COLORS.len() as u64) as usize];
        let side = 8 + rng.below(16) as u32;
        let x0 = rng.below((w - side) as u64) as u32;
        let y0 = rng.below((h - side) as u64) as u32;
        let img = RgbImage::from_fn(w, h, |x, y| {
            if (x0..x0 + side).contains(&x) && (y0..y0 + side).contains(&y) {
                Rgb(rgb)
            } else {
                Rgb(bg)
            }
        });
        let file = format!("img{i:02}.png");
        img.save(images.join(&file))?;

        let region = RegionBox::new(
            x0 as f64 / w as f64,
            y0 as f64 / h as f64,
            (x0 + side) as f64 / w as f64,
            (y0 + side) as f64 / h as f64,
        )?;
        let question = format!("Where is the {name} square in the image? Answer with a bounding box.");
        let text = match i {
            7 | 23 => format!("Question: {question} Answer: [0.1,0.2,0.3]</s>"),
            11 => format!("Question: {question} {}</s>", serialize_box(&region)),
            31 => "   </s>".to_string(),
            42 => {
                script.push(ScriptEntry::Error {
                    image: file,
                    error: "model overloaded".into(),
                });
                continue;
            }
            _ => format!("Question: {question} Answer: {}</s>", serialize_box(&region)),
        };
        script.push(ScriptEntry::Text { image: file, text });
    }
    write_jsonl(&out.join("generations.jsonl"), &script)?;

    let mut cosines = String::new();
    for (name, _, c) in COLORS {
        writeln!(cosines, r#"{{"text":"{name} square","cosine":{c}}}"#)?;
    }
    std::fs::write(out.join("embed_script.jsonl"), cosines)?;

    let report = build_manifest(&images, "fixture", 1)?;
    report.manifest.save(&out.join("manifest.jsonl"))?;

    let published = CorpusStats {
        expression_length_hist: [(6, 705_537), (7, 302_373)].into_iter().collect(),
        unindexed_images: 845_110,
        samples: 845_110,
        objects: 1_007_910,
        expressions: 1_007_910,
        expression_tokens: 6 * 705_537 + 7 * 302_373,
        ..Default::default()
    };
    let text = serde_json::to_string_pretty(&StatsDocument::new(published))? + "\n";
    std::fs::write(out.join("stats_845k.json"), text)?;
    println!("wrote fixture to {}", out.display());
    Ok(())
}
