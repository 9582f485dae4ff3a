//! Seeded synthetic corpora with dirty surface forms and ground truth.
//!
//! Every identifier is generated in canonical form first and only then
//! rendered in one of several messy spellings, so tests can join on the
//! canonical values without going through the normalizers under test.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub releases: usize,
    pub refs: usize,
    pub wikipedia_rows: usize,
    pub editions: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { releases: 10_000, refs: 50_000, wikipedia_rows: 2_000, editions: 2_000, seed: 42 }
    }
}

/// Canonical identifiers a record really carries; `arxiv` without version.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthIds {
    pub doi: Option<String>,
    pub pmid: Option<String>,
    pub pmcid: Option<String>,
    pub arxiv: Option<String>,
    pub isbn13: Option<String>,
}

impl TruthIds {
    /// `(scheme, value)` pairs in scheme order.
    pub fn pairs(&self) -> Vec<(&'static str, &str)> {
        [("doi", &self.doi), ("pmid", &self.pmid), ("pmcid", &self.pmcid), ("arxiv", &self.arxiv), ("isbn", &self.isbn13)]
            .into_iter()
            .filter_map(|(s, v)| v.as_deref().map(|v| (s, v)))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthRelease {
    pub ident: String,
    pub json: String,
    pub truth: TruthIds,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthRef {
    pub source_ident: String,
    pub ref_index: u32,
    pub json: String,
    pub truth: TruthIds,
    /// The catalog or edition record the generator had in mind, if any.
    pub intended: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthEdition {
    pub key: String,
    pub work: String,
    pub json: String,
    pub isbn13: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SynthCorpus {
    pub releases: Vec<SynthRelease>,
    pub refs: Vec<SynthRef>,
    pub wikipedia: Vec<SynthRef>,
    pub editions: Vec<SynthEdition>,
}

#[derive(Debug, Clone)]
pub struct SynthPaths {
    pub releases: PathBuf,
    pub refs: PathBuf,
    pub wikipedia: PathBuf,
    pub editions: PathBuf,
}

const WORDS: &[&str] = &[
    "adaptive", "analysis", "approach", "bayesian", "boundary", "carbon", "cellular", "climate", "coastal", "cognitive", "complex",
    "control", "coupled", "crystal", "data", "decay", "deep", "density", "design", "digital", "discrete", "dynamics", "ecology",
    "effects", "efficient", "elastic", "energy", "enzyme", "estimation", "evidence", "evolution", "field", "flow", "fluid", "forest",
    "framework", "gene", "genome", "graph", "growth", "heat", "hybrid", "imaging", "inference", "kernel", "kinetics", "language",
    "lattice", "learning", "linear", "liquid", "magnetic", "markov", "memory", "metabolic", "methods", "model", "molecular", "network",
    "neural", "nonlinear", "ocean", "optical", "optimal", "particle", "patterns", "phase", "plasma", "policy", "polymer", "population",
    "protein", "quantum", "random", "rates", "regional", "response", "river", "robust", "sampling", "scaling", "signal", "soil",
    "sparse", "spatial", "spectral", "stability", "stochastic", "structure", "surface", "survey", "synthesis", "systems", "thermal",
    "theory", "transport", "tropical", "urban", "variation", "viral", "wave", "wetland",
];
const CONNECTORS: &[&str] = &["of", "in", "for", "and", "on", "with", "under", "from"];
const GIVEN: &[&str] = &[
    "Ann", "Bo", "Carla", "David", "Elena", "Farid", "Grace", "Hiro", "Ines", "Jonas", "Kavya", "Liam", "Maria", "Nikolai", "Olu",
    "Priya", "Quentin", "Rosa", "Sven", "Tomas", "Uma", "Viktor", "Wen", "Ximena", "Yusuf", "Zoe", "José", "Åsa", "Zoë", "Hélène",
];
const FAMILY: &[&str] = &[
    "Smith", "Garcia", "Nakamura", "Okafor", "Müller", "Rossi", "Kowalski", "Chen", "Patel", "Dubois", "Silva", "Larsen", "Novak",
    "Haddad", "Ivanova", "Kim", "Lopez", "Moreau", "Nguyen", "Oliveira", "Peters", "Quinn", "Rahman", "Schmidt", "Tanaka", "Umar",
    "Varga", "Weber", "Yilmaz", "Zhang", "Núñez", "Brien", "Andersson", "Bianchi", "Costa", "Duarte", "Eriksen", "Fischer", "Gomez",
    "Horvat",
];
const STOP_TITLES: &[&str] = &["Editorial", "Introduction", "Erratum", "Book Review", "Preface"];
const PROVENANCE: &[(&str, u32)] = &[("crossref", 50), ("grobid", 35), ("fatcat-pubmed", 10), ("fatcat-datacite", 5)];
const IDENT_ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz234567";

struct Gen {
    rng: ChaCha8Rng,
    used_dois: HashMap<String, usize>,
    serial: u64,
}

/// Weighted pick from `(value, weight)` pairs.
fn weighted<'a>(rng: &mut ChaCha8Rng, items: &[(&'a str, u32)]) -> &'a str {
    let total: u32 = items.iter().map(|(_, w)| w).sum();
    let mut x = rng.random_range(0..total);
    for (v, w) in items {
        if x < *w {
            return v;
        }
        x -= w;
    }
    items[items.len() - 1].0
}

pub fn isbn13_check(first12: &str) -> char {
    let sum: u32 = first12.bytes().enumerate().map(|(i, b)| u32::from(b - b'0') * if i % 2 == 0 { 1 } else { 3 }).sum();
    char::from(b'0' + ((10 - sum % 10) % 10) as u8)
}

pub fn isbn10_check(first9: &str) -> char {
    let sum: u32 = first9.bytes().enumerate().map(|(i, b)| u32::from(b - b'0') * (10 - i as u32)).sum();
    match (11 - sum % 11) % 11 {
        10 => 'X',
        d => char::from(b'0' + d as u8),
    }
}

impl Gen {
    fn chance(&mut self, p: f64) -> bool {
        self.rng.random_bool(p)
    }

    fn ident(&mut self) -> String {
        (0..26).map(|_| char::from(*IDENT_ALPHABET.choose(&mut self.rng).unwrap())).collect()
    }

    fn title(&mut self) -> String {
        let n = self.rng.random_range(3..8);
        let mut words: Vec<String> = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 && i < n - 1 && self.chance(0.25) {
                words.push(CONNECTORS.choose(&mut self.rng).unwrap().to_string());
            }
            words.push(WORDS.choose(&mut self.rng).unwrap().to_string());
        }
        let mut t = words.join(" ");
        if let Some(first) = t.get_mut(0..1) {
            first.make_ascii_uppercase();
        }
        t
    }

    fn person(&mut self) -> (String, String) {
        (GIVEN.choose(&mut self.rng).unwrap().to_string(), FAMILY.choose(&mut self.rng).unwrap().to_string())
    }

    fn doi(&mut self) -> String {
        self.serial += 1;
        let prefix = ["10.1000", "10.1016", "10.1371", "10.15468", "10.5281", "10.1093", "10.48550"].choose(&mut self.rng).unwrap();
        let suffix = match self.rng.random_range(0..4) {
            0 => format!("j.x.{}.{:04}", 1990 + self.serial % 30, self.serial),
            1 => format!("journal.{}", self.serial),
            2 => format!("0003-4916({}){}-x", 60 + self.serial % 40, 9000 + self.serial),
            _ => format!("zenodo.{}", 100_000 + self.serial),
        };
        format!("{prefix}/{suffix}")
    }

    fn isbn13(&mut self) -> String {
        let body: String = (0..9).map(|_| char::from(b'0' + self.rng.random_range(0..10u8))).collect();
        let first12 = format!("978{body}");
        format!("{first12}{}", isbn13_check(&first12))
    }

    fn arxiv(&mut self) -> String {
        format!("{:02}{:02}.{:05}", self.rng.random_range(10..24), self.rng.random_range(1..13), self.rng.random_range(0..100_000))
    }

    fn doi_surface(&mut self, doi: &str) -> String {
        match self.rng.random_range(0..5) {
            0 => doi.to_string(),
            1 => doi.to_uppercase(),
            2 => format!("https://doi.org/{doi}"),
            3 => format!("doi:{doi}"),
            _ => format!("http://dx.doi.org/{}", doi.to_uppercase()),
        }
    }

    fn pmid_surface(&mut self, pmid: &str) -> String {
        match self.rng.random_range(0..3) {
            0 => pmid.to_string(),
            1 => format!("PMID: {pmid}"),
            _ => format!("00{pmid}"),
        }
    }

    fn arxiv_surface(&mut self, base: &str) -> String {
        let v = self.rng.random_range(1..4);
        match self.rng.random_range(0..4) {
            0 => base.to_string(),
            1 => format!("arXiv:{base}v{v}"),
            2 => format!("https://arxiv.org/abs/{base}v{v}"),
            _ => format!("{base}v{v}"),
        }
    }

    fn isbn_surface(&mut self, isbn13: &str) -> String {
        match self.rng.random_range(0..3) {
            0 => isbn13.to_string(),
            1 => format!("{}-{}-{}-{}-{}", &isbn13[0..3], &isbn13[3..4], &isbn13[4..7], &isbn13[7..12], &isbn13[12..]),
            _ => {
                let nine = &isbn13[3..12];
                format!("{}-{}-{}-{}", &nine[0..1], &nine[1..4], &nine[4..9], isbn10_check(nine))
            }
        }
    }

    /// Renders a byline entry in one of the usual citation styles.
    fn name_surface(&mut self, given: &str, family: &str) -> String {
        match self.rng.random_range(0..4) {
            0 => format!("{given} {family}"),
            1 => format!("{family}, {given}"),
            2 => format!("{}. {family}", given.chars().next().unwrap()),
            _ => format!("{family}, {}.", given.chars().next().unwrap()),
        }
    }

    fn title_surface(&mut self, title: &str) -> String {
        match self.rng.random_range(0..5) {
            0 | 1 => title.to_string(),
            2 => title.to_lowercase(),
            3 => format!("{title}."),
            _ => title.to_uppercase(),
        }
    }
}

struct CatalogEntry {
    ident: String,
    title: String,
    people: Vec<(String, String)>,
    year: i32,
    truth: TruthIds,
}

impl SynthCorpus {
    pub fn generate(cfg: &SynthConfig) -> SynthCorpus {
        let mut g = Gen { rng: ChaCha8Rng::seed_from_u64(cfg.seed), used_dois: HashMap::new(), serial: 0 };
        let mut catalog: Vec<CatalogEntry> = Vec::with_capacity(cfg.releases);
        let mut corpus = SynthCorpus::default();

        for i in 0..cfg.releases {
            let ident = g.ident();
            let title = if g.chance(0.005) {
                STOP_TITLES.choose(&mut g.rng).unwrap().to_string()
            } else if i > 0 && g.chance(0.01) {
                // Same title, different work.
                catalog[g.rng.random_range(0..i)].title.clone()
            } else {
                g.title()
            };
            let people: Vec<_> = (0..g.rng.random_range(0..6)).map(|_| g.person()).collect();
            let year = g.rng.random_range(1950..2024);
            let mut truth = TruthIds::default();
            if g.chance(0.8) {
                // A few catalog records share one DOI, as real duplicates do.
                let doi = if i > 0 && g.chance(0.003) {
                    catalog[g.rng.random_range(0..i)].truth.doi.clone().unwrap_or_else(|| g.doi())
                } else {
                    g.doi()
                };
                *g.used_dois.entry(doi.clone()).or_default() += 1;
                truth.doi = Some(doi);
            }
            if g.chance(0.2) {
                truth.pmid = Some(g.rng.random_range(1..40_000_000u32).to_string());
            }
            if g.chance(0.1) {
                truth.pmcid = Some(format!("PMC{}", g.rng.random_range(1..9_000_000u32)));
            }
            if g.chance(0.1) {
                truth.arxiv = Some(g.arxiv());
            }
            if g.chance(0.05) {
                truth.isbn13 = Some(g.isbn13());
            }
            let mut ext = Map::new();
            if let Some(d) = &truth.doi {
                ext.insert("doi".into(), g.doi_surface(d).into());
            }
            if let Some(p) = &truth.pmid {
                ext.insert("pmid".into(), g.pmid_surface(p).into());
            }
            if let Some(p) = &truth.pmcid {
                ext.insert("pmcid".into(), p.to_lowercase().into());
            }
            if let Some(a) = &truth.arxiv {
                ext.insert("arxiv".into(), g.arxiv_surface(a).into());
            }
            if let Some(b) = &truth.isbn13 {
                ext.insert("isbn13".into(), g.isbn_surface(b).into());
            }
            let stage = ["published", "published", "published", "preprint", "submitted"].choose(&mut g.rng).unwrap();
            let contribs: Vec<Value> = people.iter().map(|(gv, f)| json!({ "raw_name": format!("{gv} {f}") })).collect();
            let mut obj = json!({
                "ident": ident,
                "title": title,
                "release_year": year,
                "release_stage": stage,
                "ext_ids": ext,
            });
            if !contribs.is_empty() {
                obj["contribs"] = Value::Array(contribs);
            }
            if g.chance(0.02) {
                if let Some(other) = catalog.last().and_then(|c: &CatalogEntry| c.truth.doi.clone()) {
                    obj["related_dois"] = json!([other]);
                }
            }
            corpus.releases.push(SynthRelease { ident: ident.clone(), json: obj.to_string(), truth: truth.clone() });
            catalog.push(CatalogEntry { ident, title, people, year, truth });
        }

        for i in 0..cfg.editions {
            let key = format!("OL{}M", 1_000_000 + i);
            let work = format!("OL{}W", 500_000 + i / 2);
            let isbn = g.isbn13();
            let title = g.title();
            let people: Vec<_> = (0..g.rng.random_range(1..3)).map(|_| g.person()).collect();
            let obj = json!({
                "key": format!("/books/{key}"),
                "works": [{ "key": format!("/works/{work}") }],
                "isbn_13": [isbn],
                "title": title,
                "authors": people.iter().map(|(a, b)| json!({ "name": format!("{a} {b}") })).collect::<Vec<_>>(),
                "publish_date": g.rng.random_range(1950..2024).to_string(),
            });
            corpus.editions.push(SynthEdition { key, work, json: obj.to_string(), isbn13: isbn });
        }

        let mut positions: HashMap<String, u32> = HashMap::new();
        for _ in 0..cfg.refs {
            let Some(src) = catalog.choose(&mut g.rng) else { break };
            let source = src.ident.clone();
            let pos = positions.entry(source.clone()).or_insert(0);
            let ref_index = *pos;
            *pos += 1;
            let (biblio, truth, intended) = ref_biblio(&mut g, &catalog, &corpus.editions, src);
            let provenance = weighted(&mut g.rng, PROVENANCE);
            let mut obj = json!({ "source_ident": source, "ref_source": provenance, "biblio": biblio, "source_year": src.year });
            if g.chance(0.8) {
                obj["index"] = json!(ref_index);
            }
            corpus.refs.push(SynthRef { source_ident: source, ref_index, json: obj.to_string(), truth, intended });
        }

        let mut articles: Vec<String> = (0..(cfg.wikipedia_rows / 3).max(1)).map(|i| format!("Article_{i}_{}", g.title().replace(' ', "_"))).collect();
        articles.sort();
        let mut wpos: HashMap<String, u32> = HashMap::new();
        for _ in 0..cfg.wikipedia_rows {
            let article = articles.choose(&mut g.rng).unwrap().clone();
            let pos = wpos.entry(article.clone()).or_insert(0);
            let ref_index = *pos;
            *pos += 1;
            let dummy = CatalogEntry { ident: String::new(), title: String::new(), people: vec![], year: 2020, truth: TruthIds::default() };
            let (mut cited, truth, intended) = ref_biblio(&mut g, &catalog, &[], &dummy);
            if let Value::Object(m) = &mut cited {
                m.remove("isbn");
                m.remove("pmcid");
                m.remove("arxiv");
            }
            let truth = TruthIds { isbn13: None, pmcid: None, arxiv: None, ..truth };
            let obj = json!({ "article_title": article, "cited": cited });
            corpus.wikipedia.push(SynthRef { source_ident: article, ref_index, json: obj.to_string(), truth, intended });
        }
        corpus
    }

    pub fn write(&self, dir: &Path) -> Result<SynthPaths> {
        std::fs::create_dir_all(dir)?;
        let paths = SynthPaths {
            releases: dir.join("releases.json"),
            refs: dir.join("refs.json"),
            wikipedia: dir.join("wikipedia.json"),
            editions: dir.join("editions.json"),
        };
        let write = |path: &Path, lines: &mut dyn Iterator<Item = &str>| -> Result<()> {
            let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
            for l in lines {
                w.write_all(l.as_bytes())?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
            Ok(())
        };
        write(&paths.releases, &mut self.releases.iter().map(|r| r.json.as_str()))?;
        write(&paths.refs, &mut self.refs.iter().map(|r| r.json.as_str()))?;
        write(&paths.wikipedia, &mut self.wikipedia.iter().map(|r| r.json.as_str()))?;
        write(&paths.editions, &mut self.editions.iter().map(|r| r.json.as_str()))?;
        Ok(paths)
    }
}

/// Biblio object, its true identifiers, and the intended target.
fn ref_biblio(g: &mut Gen, catalog: &[CatalogEntry], editions: &[SynthEdition], src: &CatalogEntry) -> (Value, TruthIds, Option<String>) {
    let mut b = Map::new();
    let mut truth = TruthIds::default();
    let roll = g.rng.random_range(0..100);
    let intended;
    if roll < 58 || (roll < 63 && editions.is_empty()) {
        let tgt = if g.chance(0.03) { src } else { catalog.choose(&mut g.rng).unwrap() };
        intended = Some(tgt.ident.clone());
        if let Some(d) = &tgt.truth.doi {
            if g.chance(0.75) {
                if g.chance(0.03) {
                    b.insert("doi".into(), format!("10.{}", d.trim_start_matches("10.").replace('/', "")).into());
                } else {
                    b.insert("doi".into(), g.doi_surface(d).into());
                    truth.doi = Some(d.clone());
                }
            }
        }
        if let Some(p) = &tgt.truth.pmid {
            if g.chance(0.5) {
                b.insert("pmid".into(), g.pmid_surface(p).into());
                truth.pmid = Some(p.clone());
            }
        }
        if let Some(p) = &tgt.truth.pmcid {
            if g.chance(0.3) {
                b.insert("pmcid".into(), p.clone().into());
                truth.pmcid = Some(p.clone());
            }
        }
        if let Some(a) = &tgt.truth.arxiv {
            if g.chance(0.6) {
                b.insert("arxiv".into(), g.arxiv_surface(a).into());
                truth.arxiv = Some(a.clone());
            }
        }
        if let Some(i) = &tgt.truth.isbn13 {
            if g.chance(0.6) {
                if g.chance(0.05) {
                    // Corrupted check digit.
                    let last = i.as_bytes()[12] - b'0';
                    b.insert("isbn".into(), format!("{}{}", &i[..12], (last + 1) % 10).into());
                } else {
                    b.insert("isbn".into(), g.isbn_surface(i).into());
                    truth.isbn13 = Some(i.clone());
                }
            }
        }
        if g.chance(0.85) {
            b.insert("title".into(), g.title_surface(&tgt.title).into());
        }
        if !tgt.people.is_empty() && g.chance(0.75) {
            let mut names: Vec<String> = tgt.people.iter().map(|(gv, f)| g.name_surface(gv, f)).collect();
            if names.len() > 2 && g.chance(0.3) {
                names.truncate(names.len() - 1);
            }
            b.insert("authors".into(), names.into());
        }
        if g.chance(0.85) {
            let year = if g.chance(0.1) { tgt.year + 1 } else { tgt.year };
            b.insert("year".into(), year.into());
        }
    } else if roll < 66 && !editions.is_empty() {
        let ed = editions.choose(&mut g.rng).unwrap();
        intended = Some(ed.key.clone());
        let v: Value = serde_json::from_str(&ed.json).unwrap();
        if g.chance(0.6) {
            b.insert("isbn".into(), g.isbn_surface(&ed.isbn13).into());
            truth.isbn13 = Some(ed.isbn13.clone());
        }
        if let Some(t) = v["title"].as_str() {
            b.insert("title".into(), g.title_surface(t).into());
        }
        let names: Vec<String> = v["authors"].as_array().unwrap().iter().filter_map(|a| a["name"].as_str().map(String::from)).collect();
        b.insert("authors".into(), names.into());
    } else if roll < 92 {
        intended = None;
        b.insert("title".into(), g.title().into());
        let names: Vec<String> = (0..g.rng.random_range(1..4)).map(|_| {
            let (gv, f) = g.person();
            g.name_surface(&gv, &f)
        }).collect();
        b.insert("authors".into(), names.into());
        b.insert("year".into(), g.rng.random_range(1900..2024).into());
        if g.chance(0.3) {
            let d = loop {
                let d = g.doi();
                if !g.used_dois.contains_key(&d) {
                    break d;
                }
            };
            b.insert("doi".into(), g.doi_surface(&d).into());
            truth.doi = Some(d);
        }
    } else {
        intended = None;
        let host = ["example.org", "Data.Example.COM", "www.univ.edu", "archive.site.net"].choose(&mut g.rng).unwrap();
        let path = g.rng.random_range(0..100_000);
        let tail = ["", ".", ").", ",", ";"].choose(&mut g.rng).unwrap();
        let scheme = ["http://", "https://", "http://http://"].choose(&mut g.rng).unwrap();
        let url = format!("{scheme}{host}/page/{path}{tail}");
        if g.chance(0.5) {
            b.insert("url".into(), url.into());
        } else {
            b.insert("unstructured".into(), format!("Online resource. Available at {url} (accessed 2019)").into());
        }
    }
    if b.is_empty() {
        b.insert("unstructured".into(), "Personal communication".into());
    }
    (Value::Object(b), truth, intended)
}
