//! Corpus statistics: length histograms, noun/verb frequencies, region size
//! distributions and dataset comparison tables.
//!
//! Lengths are counted in words (see [`tokenize`]). Partial statistics from
//! shards merge associatively and commutatively, so sharded and one-pass
//! computation agree exactly.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::exec;
use crate::filter::{scoring_pairs, strip_literals, ExtractionRules};
use crate::io::{self, RecordError};
use crate::parser::sample_boxes;
use crate::schema::{validate_sample, Sample};

pub const LENGTH_UNIT: &str = "words";
pub const HISTOGRAM_CAP: usize = 30;

/// Lowercased whitespace-separated tokens with surrounding punctuation
/// removed; tokens that are only punctuation are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosTag {
    Noun,
    Verb,
    Other,
}

pub trait PosTagger: Send + Sync {
    fn tag(&self, token: &str) -> PosTag;
}

/// Lexicon lookup with suffix fallbacks. The first section that lists a
/// word decides its tag.
#[derive(Debug, Clone)]
pub struct LexiconTagger {
    words: HashMap<String, PosTag>,
}

const BUNDLED_LEXICON: &str = include_str!("../assets/lexicon.txt");

const VERB_SUFFIXES: &[&str] = &["ing", "ed", "ize", "ise", "ify"];
const NOUN_SUFFIXES: &[&str] = &[
    "tion", "sion", "ness", "ment", "ity", "ism", "ship", "ance", "ence", "er", "or", "ist",
];

impl LexiconTagger {
    pub fn from_text(text: &str) -> Self {
        let mut words = HashMap::new();
        let mut section = None;
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line {
                "[noun]" => section = Some(PosTag::Noun),
                "[verb]" => section = Some(PosTag::Verb),
                "[other]" => section = Some(PosTag::Other),
                _ => {
                    if let Some(tag) = section {
                        for w in line.split_whitespace() {
                            words.entry(w.to_lowercase()).or_insert(tag);
                        }
                    }
                }
            }
        }
        LexiconTagger { words }
    }

    pub fn bundled() -> Self {
        Self::from_text(BUNDLED_LEXICON)
    }
}

impl PosTagger for LexiconTagger {
    fn tag(&self, token: &str) -> PosTag {
        if let Some(tag) = self.words.get(token) {
            return *tag;
        }
        if token.len() < 4 || !token.chars().all(|c| c.is_alphabetic()) {
            return PosTag::Other;
        }
        if VERB_SUFFIXES.iter().any(|s| token.ends_with(s)) {
            PosTag::Verb
        } else if NOUN_SUFFIXES.iter().any(|s| token.ends_with(s)) {
            PosTag::Noun
        } else {
            PosTag::Other
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub question_length_hist: BTreeMap<usize, u64>,
    pub expression_length_hist: BTreeMap<usize, u64>,
    pub noun_counts: BTreeMap<String, u64>,
    pub verb_counts: BTreeMap<String, u64>,
    /// Sorted normalized box widths, one per box.
    pub region_widths: Vec<f64>,
    pub region_heights: Vec<f64>,
    pub image_refs: BTreeSet<String>,
    /// Images known only by count, e.g. from a published summary.
    #[serde(default)]
    pub unindexed_images: u64,
    pub samples: u64,
    pub objects: u64,
    pub expressions: u64,
    pub expression_tokens: u64,
    pub invalid: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub samples: u64,
    pub images: u64,
    pub objects: u64,
    pub avg_expression_length: f64,
    pub invalid: u64,
}

fn add_counts<K: Ord>(into: &mut BTreeMap<K, u64>, from: BTreeMap<K, u64>) {
    for (k, v) in from {
        *into.entry(k).or_insert(0) += v;
    }
}

fn merge_sorted(a: Vec<f64>, b: Vec<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i].total_cmp(&b[j]).is_le() {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

impl CorpusStats {
    pub fn images(&self) -> u64 {
        self.image_refs.len() as u64 + self.unindexed_images
    }

    pub fn avg_expression_length(&self) -> f64 {
        if self.expressions == 0 {
            0.0
        } else {
            self.expression_tokens as f64 / self.expressions as f64
        }
    }

    pub fn totals(&self) -> Totals {
        Totals {
            samples: self.samples,
            images: self.images(),
            objects: self.objects,
            avg_expression_length: self.avg_expression_length(),
            invalid: self.invalid,
        }
    }

    /// Folds one sample in; region sizes are left unsorted. Invalid samples
    /// are only counted.
    fn accumulate(&mut self, s: &Sample, tagger: &dyn PosTagger, rules: &ExtractionRules) {
        if !validate_sample(s).is_empty() {
            self.invalid += 1;
            return;
        }
        self.samples += 1;
        self.image_refs.insert(s.image_ref.clone());
        if let Some(first) = s.turns.first() {
            let len = tokenize(&strip_literals(&first.question)).len();
            *self.question_length_hist.entry(len).or_insert(0) += 1;
        }
        for turn in &s.turns {
            for text in [&turn.question, &turn.answer] {
                for token in tokenize(&strip_literals(text)) {
                    let counts = match tagger.tag(&token) {
                        PosTag::Noun => &mut self.noun_counts,
                        PosTag::Verb => &mut self.verb_counts,
                        PosTag::Other => continue,
                    };
                    *counts.entry(token).or_insert(0) += 1;
                }
            }
        }
        let boxes = sample_boxes(s);
        self.objects += boxes.len() as u64;
        self.region_widths.extend(boxes.iter().map(|b| b.x2 - b.x1));
        self.region_heights.extend(boxes.iter().map(|b| b.y2 - b.y1));
        for pair in scoring_pairs(s, rules) {
            let len = tokenize(&pair.expression).len();
            self.expressions += 1;
            self.expression_tokens += len as u64;
            *self.expression_length_hist.entry(len).or_insert(0) += 1;
        }
    }

    pub fn from_samples(samples: &[Sample], tagger: &dyn PosTagger) -> Self {
        let rules = ExtractionRules::default();
        let mut stats = CorpusStats::default();
        for s in samples {
            stats.accumulate(s, tagger, &rules);
        }
        stats.region_widths.sort_by(f64::total_cmp);
        stats.region_heights.sort_by(f64::total_cmp);
        stats
    }

    pub fn merge(mut self, other: CorpusStats) -> CorpusStats {
        add_counts(&mut self.question_length_hist, other.question_length_hist);
        add_counts(&mut self.expression_length_hist, other.expression_length_hist);
        add_counts(&mut self.noun_counts, other.noun_counts);
        add_counts(&mut self.verb_counts, other.verb_counts);
        self.region_widths = merge_sorted(self.region_widths, other.region_widths);
        self.region_heights = merge_sorted(self.region_heights, other.region_heights);
        self.image_refs.extend(other.image_refs);
        self.unindexed_images += other.unindexed_images;
        self.samples += other.samples;
        self.objects += other.objects;
        self.expressions += other.expressions;
        self.expression_tokens += other.expression_tokens;
        self.invalid += other.invalid;
        self
    }
}

/// Sharded statistics over an in-memory sample list.
pub fn stats_parallel(samples: &[Sample], tagger: &dyn PosTagger, parallelism: usize) -> CorpusStats {
    exec::chunked_reduce(
        samples,
        parallelism,
        |chunk| CorpusStats::from_samples(chunk, tagger),
        CorpusStats::merge,
        CorpusStats::default(),
    )
}

/// Statistics of a sample file. Lines that do not decode as samples count
/// as invalid.
pub fn compute_stats(path: &Path, tagger: &dyn PosTagger, parallelism: usize) -> Result<CorpusStats, RecordError> {
    let mut samples = Vec::new();
    let mut undecodable = 0;
    for (_, record) in io::read_jsonl_lenient::<Sample>(path)? {
        match record {
            Ok(s) => samples.push(s),
            Err(_) => undecodable += 1,
        }
    }
    let mut stats = stats_parallel(&samples, tagger, parallelism);
    stats.invalid += undecodable;
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermKind {
    Noun,
    Verb,
}

/// The `n` most frequent terms, count descending then term ascending.
pub fn top_terms(stats: &CorpusStats, kind: TermKind, n: usize) -> Vec<(String, u64)> {
    let counts = match kind {
        TermKind::Noun => &stats.noun_counts,
        TermKind::Verb => &stats.verb_counts,
    };
    let mut terms: Vec<(String, u64)> = counts.iter().map(|(k, v)| (k.clone(), *v)).collect();
    terms.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    terms.truncate(n);
    terms
}

/// Histogram buckets for display: every length from the smallest observed
/// one up to `cap - 1`, then a single `"{cap}+"` bucket when any length
/// reaches `cap`.
pub fn capped_histogram(hist: &BTreeMap<usize, u64>, cap: usize) -> Vec<(String, u64)> {
    let Some(&min) = hist.keys().next() else {
        return vec![];
    };
    let max = *hist.keys().next_back().expect("non-empty");
    let mut out: Vec<(String, u64)> = (min.min(cap)..cap.min(max + 1))
        .map(|k| (k.to_string(), hist.get(&k).copied().unwrap_or(0)))
        .collect();
    let over: u64 = hist.range(cap..).map(|(_, v)| v).sum();
    if max >= cap {
        out.push((format!("{cap}+"), over));
    }
    out
}

/// Counts of values in `bins` equal-width bins over `[0, 1]`; the last bin
/// includes 1.0.
pub fn binned(values: &[f64], bins: usize) -> Vec<(String, u64)> {
    let mut counts = vec![0u64; bins];
    for &v in values {
        let idx = ((v * bins as f64).floor() as usize).min(bins - 1);
        counts[idx] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let lo = i as f64 / bins as f64;
            let hi = (i + 1) as f64 / bins as f64;
            (format!("{lo:.1}-{hi:.1}"), c)
        })
        .collect()
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// A standalone SVG bar chart.
pub fn bar_chart_svg(title: &str, bars: &[(String, u64)]) -> String {
    let (bar_w, gap, plot_h, margin) = (24.0, 6.0, 240.0, 40.0);
    let width = margin * 2.0 + bars.len() as f64 * (bar_w + gap);
    let height = plot_h + margin * 2.0 + 40.0;
    let max = bars.iter().map(|b| b.1).max().unwrap_or(0).max(1) as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{margin}" y="20" font-size="14">{}</text>"#,
        escape_xml(title)
    );
    for (i, (label, count)) in bars.iter().enumerate() {
        let h = *count as f64 / max * plot_h;
        let x = margin + i as f64 * (bar_w + gap);
        let y = margin + plot_h - h;
        let _ = writeln!(
            svg,
            r##"<rect x="{x:.1}" y="{y:.1}" width="{bar_w}" height="{h:.1}" fill="#4a78b5"><title>{}: {count}</title></rect>"##,
            escape_xml(label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" transform="rotate(-60 {:.1} {:.1})">{}</text>"#,
            x + bar_w / 2.0,
            margin + plot_h + 12.0,
            x + bar_w / 2.0,
            margin + plot_h + 12.0,
            escape_xml(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// The structured stats document written per corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsDocument {
    pub length_unit: String,
    pub totals: Totals,
    pub stats: CorpusStats,
}

impl StatsDocument {
    pub fn new(stats: CorpusStats) -> Self {
        StatsDocument {
            length_unit: LENGTH_UNIT.into(),
            totals: stats.totals(),
            stats,
        }
    }
}

/// Writes `stats.json`, histogram and top-term data, and SVG charts into
/// `dir`.
pub fn write_report(stats: &CorpusStats, dir: &Path, top_n: usize) -> Result<(), RecordError> {
    std::fs::create_dir_all(dir).map_err(|e| RecordError::io(dir, e))?;
    io::write_json_pretty(&dir.join("stats.json"), &StatsDocument::new(stats.clone()))?;

    let charts = [
        (
            "question_length",
            format!("Question length ({LENGTH_UNIT})"),
            capped_histogram(&stats.question_length_hist, HISTOGRAM_CAP),
        ),
        (
            "expression_length",
            format!("Expression length ({LENGTH_UNIT})"),
            capped_histogram(&stats.expression_length_hist, HISTOGRAM_CAP),
        ),
        (
            "region_width",
            "Normalized region width".to_string(),
            binned(&stats.region_widths, 10),
        ),
        (
            "region_height",
            "Normalized region height".to_string(),
            binned(&stats.region_heights, 10),
        ),
        (
            "top_nouns",
            format!("Top {top_n} nouns"),
            top_terms(stats, TermKind::Noun, top_n),
        ),
        (
            "top_verbs",
            format!("Top {top_n} verbs"),
            top_terms(stats, TermKind::Verb, top_n),
        ),
    ];
    for (name, title, bars) in charts {
        let svg_path = dir.join(format!("{name}.svg"));
        std::fs::write(&svg_path, bar_chart_svg(&title, &bars)).map_err(|e| RecordError::io(&svg_path, e))?;
        let csv_path = dir.join(format!("{name}.csv"));
        let mut text = String::from("label,count\n");
        for (label, count) in &bars {
            let _ = writeln!(text, "{label},{count}");
        }
        std::fs::write(&csv_path, text).map_err(|e| RecordError::io(&csv_path, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub images: u64,
    pub objects: u64,
    pub avg_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

/// `1007910` → `"1,007,910"`.
pub fn thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

pub fn compare_datasets(inputs: &[(&str, &CorpusStats)]) -> ComparisonTable {
    ComparisonTable {
        rows: inputs
            .iter()
            .map(|(label, s)| ComparisonRow {
                label: label.to_string(),
                images: s.images(),
                objects: s.objects,
                avg_length: s.avg_expression_length(),
            })
            .collect(),
    }
}

impl ComparisonTable {
    pub const HEADER: [&'static str; 4] = ["Dataset", "Images", "Objects", "Avg Length"];

    fn cells(&self) -> Vec<[String; 4]> {
        self.rows
            .iter()
            .map(|r| {
                [
                    r.label.clone(),
                    thousands(r.images),
                    thousands(r.objects),
                    format!("{:.2}", r.avg_length),
                ]
            })
            .collect()
    }

    /// Aligned plain-text table; labels left-aligned, numbers right-aligned.
    pub fn to_text(&self) -> String {
        let cells = self.cells();
        let mut widths = Self::HEADER.map(|h| h.chars().count());
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let render = |row: [&str; 4]| {
            let mut line = format!("{:<w$}", row[0], w = widths[0]);
            for i in 1..4 {
                let _ = write!(line, " | {:>w$}", row[i], w = widths[i]);
            }
            line.push('\n');
            line
        };
        let mut out = render(Self::HEADER);
        let rule: usize = widths.iter().sum::<usize>() + 9;
        out.push_str(&"-".repeat(rule));
        out.push('\n');
        for row in &cells {
            out.push_str(&render([&row[0], &row[1], &row[2], &row[3]]));
        }
        out
    }

    /// Machine-readable form with plain integers.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["dataset", "images", "objects", "avg_length"])
            .expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.label.clone(),
                r.images.to_string(),
                r.objects.to_string(),
                format!("{:.2}", r.avg_length),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{Provenance, TaskType, Turn};
    use proptest::prelude::*;

    fn rec(i: usize, expr: &str, b: &str) -> Sample {
        Sample {
            id: format!("s{i}"),
            image_ref: format!("im{}.png", i % 7),
            task: TaskType::Rec,
            turns: vec![Turn::new(format!("Where is {expr}?"), b)],
            provenance: Provenance::Generated,
            generator_meta: None,
        }
    }

    #[test]
    fn tokenize_examples() {
        let t = tokenize("What is the man's position on the baseball field?");
        assert_eq!(t.len(), 9);
        assert_eq!(t.last().unwrap(), "field");
        assert_eq!(t[3], "man's");
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("A chalkboard menu"), ["a", "chalkboard", "menu"]);
        assert_eq!(tokenize(" -- ok ,"), ["ok"]);
    }

    #[test]
    fn tagger_rules() {
        let t = LexiconTagger::bundled();
        assert_eq!(t.tag("man"), PosTag::Noun);
        assert_eq!(t.tag("holding"), PosTag::Verb);
        assert_eq!(t.tag("the"), PosTag::Other);
        assert_eq!(t.tag("skateboarding"), PosTag::Verb);
        assert_eq!(t.tag("happiness"), PosTag::Noun);
        assert_eq!(t.tag("42"), PosTag::Other);
    }

    #[test]
    fn average_expression_length() {
        let samples = [
            rec(0, "a red car", "[0.1,0.1,0.3,0.3]"),
            rec(1, "a man in a blue shirt", "[0.2,0.1,0.5,0.9]"),
            rec(2, "a small dog on the left of the bench", "[0.0,0.5,0.2,1.0]"),
        ];
        let s = CorpusStats::from_samples(&samples, &LexiconTagger::bundled());
        assert_eq!(s.expression_length_hist, BTreeMap::from([(3, 1), (6, 1), (9, 1)]));
        assert_eq!(format!("{:.2}", s.avg_expression_length()), "6.00");
        assert_eq!((s.samples, s.objects, s.images()), (3, 3, 3));
        assert_eq!(s.region_widths, vec![0.19999999999999998, 0.2, 0.3]);
        assert_eq!(
            CorpusStats::from_samples(&[], &LexiconTagger::bundled()),
            CorpusStats::default()
        );
    }

    #[test]
    fn top_terms_order() {
        let stats = CorpusStats {
            noun_counts: BTreeMap::from([("man".into(), 5), ("field".into(), 5), ("ball".into(), 2)]),
            ..Default::default()
        };
        assert_eq!(
            top_terms(&stats, TermKind::Noun, 2),
            vec![("field".into(), 5), ("man".into(), 5)]
        );
        assert!(top_terms(&stats, TermKind::Verb, 5).is_empty());
        assert_eq!(top_terms(&stats, TermKind::Noun, 30).len(), 3);
    }

    #[test]
    fn histogram_capping() {
        let h = BTreeMap::from([(3, 2), (5, 1), (31, 4), (40, 1)]);
        let bars = capped_histogram(&h, 30);
        assert_eq!(bars.first().unwrap(), &("3".to_string(), 2));
        assert_eq!(bars.last().unwrap(), &("30+".to_string(), 5));
        assert_eq!(bars.len(), 28);
        assert_eq!(binned(&[0.05, 0.2, 1.0], 10)[9].1, 1);
    }

    #[test]
    fn comparison_rendering() {
        let stats = CorpusStats {
            unindexed_images: 845_110,
            objects: 1_007_910,
            expressions: 1_007_910,
            expression_tokens: 6 * 705_537 + 7 * 302_373,
            ..Default::default()
        };
        let zero = CorpusStats::default();
        let table = compare_datasets(&[("GenixerS(845K)", &stats), ("empty", &zero)]);
        let text = table.to_text();
        assert!(
            text.contains("GenixerS(845K) | 845,110 | 1,007,910 |       6.30"),
            "{text}"
        );
        assert!(
            text.contains("empty          |       0 |         0 |       0.00"),
            "{text}"
        );
        assert_eq!(
            table.to_csv().lines().nth(1).unwrap(),
            "GenixerS(845K),845110,1007910,6.30"
        );
        assert_eq!(thousands(999), "999");
        assert_eq!(thousands(1000), "1,000");
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let svg = bar_chart_svg("a <b>", &[("1".into(), 3), ("2".into(), 0)]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt;b&gt;"));
    }

    fn shard() -> impl Strategy<Value = Vec<Sample>> {
        proptest::collection::vec((0usize..50, 0usize..6, 0u32..90, 1u32..10), 0..12).prop_map(|v| {
            v.into_iter()
                .map(|(i, words, x, w)| {
                    let expr = ["the", "man", "holding", "a", "red", "ball"][..words.max(1)].join(" ");
                    let x1 = x as f64 / 100.0;
                    rec(i, &expr, &format!("[{x1:.2},0.1,{:.2},0.5]", x1 + w as f64 / 100.0))
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn merge_laws(a in shard(), b in shard(), c in shard()) {
            let t = LexiconTagger::bundled();
            let (sa, sb, sc) = (
                CorpusStats::from_samples(&a, &t),
                CorpusStats::from_samples(&b, &t),
                CorpusStats::from_samples(&c, &t),
            );
            let left = sa.clone().merge(sb.clone()).merge(sc.clone());
            let right = sa.clone().merge(sb.clone().merge(sc.clone()));
            prop_assert_eq!(&left, &right);
            prop_assert_eq!(sa.clone().merge(sb.clone()), sb.clone().merge(sa.clone()));

            let all: Vec<Sample> = a.iter().chain(&b).chain(&c).cloned().collect();
            let whole = CorpusStats::from_samples(&all, &t);
            prop_assert_eq!(&whole, &left);
            prop_assert_eq!(&stats_parallel(&all, &t, 4), &whole);

            prop_assert_eq!(whole.question_length_hist.values().sum::<u64>(), whole.samples);
            prop_assert_eq!(whole.expression_length_hist.values().sum::<u64>(), whole.expressions);
            prop_assert!(whole.region_widths.iter().all(|w| *w > 0.0 && *w <= 1.0));
        }
    }
}
