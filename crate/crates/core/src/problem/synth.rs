//! Template-driven synthetic corpus with shared-context question variants.
//!
//! A template owns numeric slots, word lists, context patterns and question
//! schemas. Each generated group samples one context and several questions
//! with different gold equations. Equations are written over slot names and
//! rendered into plain infix text, so generated records go through the same
//! parsing and binding path as real data.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::LazyLock;

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{collect_constants, ProblemInstance, Record};
use crate::error::{Error, Result};
use crate::expr::{parse_equation, ConstantVocabulary, Expr, QuantityEnv, Value};

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("valid regex"));
static IDENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[A-Za-z_][A-Za-z0-9_]*").expect("valid regex"));
static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+(?:\.\d+)?").expect("valid regex"));

const ALLOWED_SCALES: [i64; 9] = [1, 2, 4, 5, 10, 20, 25, 50, 100];
const MAX_SAMPLING_ATTEMPTS: usize = 1000;

/// A numeric slot. Values are `k / scale` for integer `k` in
/// `[min * scale, max * scale]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    pub min: i64,
    pub max: i64,
    #[serde(default = "one")]
    pub scale: i64,
}

fn one() -> i64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionSchema {
    /// Paraphrases; one is chosen per generated problem.
    pub texts: Vec<String>,
    /// Infix equation over slot names and literal constants.
    pub equation: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub name: String,
    pub slots: Vec<Slot>,
    #[serde(default)]
    pub words: BTreeMap<String, Vec<String>>,
    pub contexts: Vec<String>,
    pub questions: Vec<QuestionSchema>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub templates: Vec<Template>,
    /// Every gold equation must be reachable within this depth.
    pub max_depth: usize,
    pub min_variants: usize,
    pub max_variants: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { templates: builtin_templates(), max_depth: 6, min_variants: 2, max_variants: 4 }
    }
}

fn invalid(template: &str, msg: impl std::fmt::Display) -> Error {
    Error::InvalidTemplate(format!("{template}: {msg}"))
}

fn render_text(pattern: &str, values: &BTreeMap<String, Value>, words: &BTreeMap<String, String>) -> String {
    PLACEHOLDER
        .replace_all(pattern, |c: &regex::Captures<'_>| {
            let key = &c[1];
            values
                .get(key)
                .map(|v| v.to_string())
                .or_else(|| words.get(key).cloned())
                .unwrap_or_else(|| c[0].to_string())
        })
        .into_owned()
}

fn render_equation(equation: &str, values: &BTreeMap<String, Value>) -> String {
    IDENT
        .replace_all(equation, |c: &regex::Captures<'_>| {
            values.get(&c[0]).map(|v| v.to_string()).unwrap_or_else(|| c[0].to_string())
        })
        .into_owned()
}

fn placeholders(text: &str) -> impl Iterator<Item = &str> {
    PLACEHOLDER.captures_iter(text).map(|c| c.get(1).expect("group").as_str())
}

impl Template {
    fn literals(&self) -> BTreeSet<String> {
        self.questions
            .iter()
            .flat_map(|q| NUMBER.find_iter(&q.equation).map(|m| m.as_str().to_string()))
            .collect()
    }

    fn literal_values(&self) -> Vec<Value> {
        self.literals().iter().filter_map(|l| Value::parse_literal(l).ok()).collect()
    }

    fn equation_slots<'a>(&'a self, q: &'a QuestionSchema) -> impl Iterator<Item = &'a str> + 'a {
        IDENT
            .find_iter(&q.equation)
            .map(|m| m.as_str())
            .filter(|id| self.slots.iter().any(|s| s.name == *id))
    }

    pub fn validate(&self, max_depth: usize) -> Result<()> {
        let name = self.name.as_str();
        if self.contexts.is_empty() {
            return Err(invalid(name, "no context patterns"));
        }
        if self.questions.len() < 2 {
            return Err(invalid(name, "needs at least two question variants"));
        }
        let mut slot_names = HashSet::new();
        for s in &self.slots {
            if !IDENT.find(&s.name).is_some_and(|m| m.as_str() == s.name) {
                return Err(invalid(name, format!("slot name {:?} is not an identifier", s.name)));
            }
            if !slot_names.insert(s.name.as_str()) || self.words.contains_key(&s.name) {
                return Err(invalid(name, format!("slot {} is declared twice", s.name)));
            }
            if s.min < 0 || s.min > s.max {
                return Err(invalid(name, format!("slot {} has an empty range", s.name)));
            }
            if !ALLOWED_SCALES.contains(&s.scale) {
                return Err(invalid(name, format!("slot {} scale {} has no finite decimal form", s.name, s.scale)));
            }
        }
        for (k, list) in &self.words {
            if list.is_empty() {
                return Err(invalid(name, format!("word list {k} is empty")));
            }
        }
        let known = |key: &str| slot_names.contains(key) || self.words.contains_key(key);
        let texts = self.contexts.iter().chain(self.questions.iter().flat_map(|q| &q.texts));
        for t in texts {
            if let Some(bad) = placeholders(t).find(|p| !known(p)) {
                return Err(invalid(name, format!("unknown placeholder {{{bad}}}")));
            }
            if NUMBER.is_match(&PLACEHOLDER.replace_all(t, "")) {
                return Err(invalid(name, format!("literal number in text {t:?}")));
            }
        }

        let dummy: BTreeMap<String, Value> = self
            .slots
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name.clone(), Value::int(1000 + i as i64)))
            .collect();
        let mut constants = ConstantVocabulary::new();
        for v in self.literal_values() {
            constants.insert(crate::expr::Constant::new(v.literal(), v));
        }
        let env = QuantityEnv::new(dummy.values().cloned().collect(), constants);
        let mut golds: HashSet<Expr> = HashSet::new();
        for q in &self.questions {
            if q.texts.is_empty() {
                return Err(invalid(name, format!("question for {:?} has no text", q.equation)));
            }
            for id in IDENT.find_iter(&q.equation) {
                let id = id.as_str();
                if !slot_names.contains(id) && !id.eq_ignore_ascii_case("pi") && !id.eq_ignore_ascii_case("x") {
                    return Err(invalid(name, format!("equation uses unknown slot {id}")));
                }
            }
            for slot in self.equation_slots(q) {
                let everywhere = |ts: &[String]| ts.iter().all(|t| placeholders(t).any(|p| p == slot));
                if !everywhere(&self.contexts) && !everywhere(&q.texts) {
                    return Err(invalid(name, format!("slot {slot} of {:?} is not always stated", q.equation)));
                }
            }
            let gold = parse_equation(&render_equation(&q.equation, &dummy), &env)
                .map_err(|e| invalid(name, format!("equation {:?}: {e}", q.equation)))?;
            if gold.required_depth() > max_depth {
                return Err(invalid(name, format!("equation {:?} needs depth {}", q.equation, gold.required_depth())));
            }
            if !golds.insert(gold) {
                return Err(invalid(name, format!("equation {:?} duplicates another question", q.equation)));
            }
        }
        Ok(())
    }

    fn sample_words<R: Rng>(&self, rng: &mut R) -> BTreeMap<String, String> {
        self.words
            .iter()
            .map(|(k, list)| (k.clone(), list[rng.random_range(0..list.len())].clone()))
            .collect()
    }

    /// Samples pairwise-distinct slot values that also differ from every
    /// literal constant in the equations.
    fn sample_values<R: Rng>(&self, rng: &mut R) -> Result<BTreeMap<String, Value>> {
        let forbidden = self.literal_values();
        'attempt: for _ in 0..MAX_SAMPLING_ATTEMPTS {
            let mut values = BTreeMap::new();
            let mut used: Vec<Value> = Vec::new();
            for s in &self.slots {
                let k = rng.random_range(s.min * s.scale..=s.max * s.scale);
                let v = Value::Exact(BigRational::new(BigInt::from(k), BigInt::from(s.scale)));
                if used.contains(&v) || forbidden.contains(&v) {
                    continue 'attempt;
                }
                used.push(v.clone());
                values.insert(s.name.clone(), v);
            }
            return Ok(values);
        }
        Err(invalid(&self.name, "slot ranges too narrow for distinct values"))
    }

    /// Renders one group: a context pattern and `(question, paraphrase)`
    /// choices under fixed slot values and words.
    pub fn render_group(
        &self,
        group: &str,
        values: &BTreeMap<String, Value>,
        words: &BTreeMap<String, String>,
        context: usize,
        questions: &[(usize, usize)],
    ) -> Vec<Record> {
        let ctx = render_text(&self.contexts[context], values, words);
        questions
            .iter()
            .map(|&(qi, ti)| {
                let q = &self.questions[qi];
                Record {
                    id: format!("{group}-q{qi}"),
                    context: ctx.clone(),
                    question: render_text(&q.texts[ti], values, words),
                    equation: render_equation(&q.equation, values),
                    answer: None,
                }
            })
            .collect()
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(Error::InvalidTemplate("no templates".into()));
        }
        if self.min_variants < 2 || self.max_variants < self.min_variants {
            return Err(Error::InvalidTemplate("variants per group must satisfy 2 <= min <= max".into()));
        }
        let mut names = HashSet::new();
        for t in &self.templates {
            if !names.insert(t.name.as_str()) {
                return Err(invalid(&t.name, "duplicate template name"));
            }
            t.validate(self.max_depth)?;
        }
        Ok(())
    }
}

/// Generates `count` records. Groups cycle through the templates; each group
/// holds between `min_variants` and `max_variants` questions with distinct
/// golds (capped by the template's question count). The group size is
/// adjusted so that no single-problem remainder is left unless `count == 1`.
pub fn synth_records(spec: &SynthSpec, count: usize, seed: u64) -> Result<Vec<Record>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(count);
    let mut contexts_seen = HashSet::new();
    let mut group = 0usize;
    while records.len() < count {
        let t = &spec.templates[group % spec.templates.len()];
        let remaining = count - records.len();
        let cap = spec.max_variants.min(t.questions.len());
        let lo = spec.min_variants.min(cap);
        let mut k = rng.random_range(lo..=cap).min(remaining);
        if remaining - k == 1 {
            if k < cap {
                k += 1;
            } else if k > 2 {
                k -= 1;
            }
        }
        let (values, words, context) = loop {
            let values = t.sample_values(&mut rng)?;
            let words = t.sample_words(&mut rng);
            let context = rng.random_range(0..t.contexts.len());
            if contexts_seen.insert(super::context_key(&render_text(&t.contexts[context], &values, &words))) {
                break (values, words, context);
            }
        };
        let mut picks = sample(&mut rng, t.questions.len(), k).into_vec();
        picks.sort_unstable();
        let choices: Vec<(usize, usize)> = picks
            .into_iter()
            .map(|qi| (qi, rng.random_range(0..t.questions[qi].texts.len())))
            .collect();
        records.extend(t.render_group(&format!("{}-{group:05}", t.name), &values, &words, context, &choices));
        group += 1;
    }
    records.truncate(count);
    Ok(records)
}

/// Generates `count` problem instances. Constants are collected from the
/// generated equations.
pub fn synth_generate(spec: &SynthSpec, count: usize, seed: u64) -> Result<Vec<ProblemInstance>> {
    let records = synth_records(spec, count, seed)?;
    let constants = collect_constants(&records);
    records
        .iter()
        .map(|r| {
            let p = ProblemInstance::from_record(r, &constants)
                .map_err(|e| Error::InvalidTemplate(format!("generated record {} failed: {e}", r.id)))?;
            if p.gold.required_depth() > spec.max_depth {
                return Err(Error::InvalidTemplate(format!("generated record {} exceeds depth", r.id)));
            }
            Ok(p)
        })
        .collect()
}

struct TemplateBuilder(Template);

impl TemplateBuilder {
    fn new(name: &str) -> Self {
        Self(Template {
            name: name.into(),
            slots: Vec::new(),
            words: BTreeMap::new(),
            contexts: Vec::new(),
            questions: Vec::new(),
        })
    }

    fn slot(mut self, name: &str, min: i64, max: i64) -> Self {
        self.0.slots.push(Slot { name: name.into(), min, max, scale: 1 });
        self
    }

    fn scaled(mut self, name: &str, min: i64, max: i64, scale: i64) -> Self {
        self.0.slots.push(Slot { name: name.into(), min, max, scale });
        self
    }

    fn words(mut self, key: &str, list: &[&str]) -> Self {
        self.0.words.insert(key.into(), list.iter().map(|s| s.to_string()).collect());
        self
    }

    fn context(mut self, text: &str) -> Self {
        self.0.contexts.push(text.into());
        self
    }

    fn question(mut self, equation: &str, texts: &[&str]) -> Self {
        self.0.questions.push(QuestionSchema {
            texts: texts.iter().map(|s| s.to_string()).collect(),
            equation: equation.into(),
        });
        self
    }
}

const NAMES: &[&str] = &["Tom", "Anna", "Lily", "Mark", "Sara", "Ben", "Nina", "Omar", "Kate", "Leo"];
const FRIENDS: &[&str] = &["Jack", "Emma", "Ryan", "Mia", "Paul", "Zoe", "Eric", "Ivy"];

/// Eight templates covering all four operations, one literal constant, and
/// gold depths 0, 2, 4 and 6.
pub fn builtin_templates() -> Vec<Template> {
    vec![
        TemplateBuilder::new("area")
            .slot("L", 30, 120)
            .slot("W", 10, 60)
            .slot("dL", 2, 25)
            .slot("dW", 2, 25)
            .words("place", &["playground", "garden", "parking lot", "swimming pool", "football field", "yard"])
            .context("The school {place} was originally {L} meters long and {W} meters wide. Later when the school is remodeled, the length is increased by {dL} meters and the width is increased by {dW} meters.")
            .context("A rectangular {place} used to be {L} meters long and {W} meters wide. After the renovation its length grew by {dL} meters and its width grew by {dW} meters.")
            .question("L*W", &["How many square meters is the original {place} area?", "What was the area of the {place} before the change, in square meters?"])
            .question("(L+dL)*(W+dW)", &["How many square meters is the current {place} area?", "What is the area of the {place} now, in square meters?"])
            .question("(L+dL)*(W+dW)-L*W", &["How many square meters are increased by the current {place} area compared to the original one?", "By how many square meters did the area of the {place} grow?"])
            .question("L/W", &["How many times the length of the original {place} was the width?", "What is the ratio of the original length to the original width?"])
            .question("L+dL", &["How many meters long is the {place} now?", "What is the new length of the {place} in meters?"])
            .question("W", &["How wide was the {place} at first, in meters?", "What was the original width of the {place}?"])
            .0,
        TemplateBuilder::new("shopping")
            .slot("a", 2, 12)
            .scaled("p", 2, 20, 2)
            .slot("b", 2, 12)
            .scaled("q", 2, 20, 2)
            .words("name", NAMES)
            .words("item", &["pens", "notebooks", "apples", "cookies", "candles"])
            .words("other", &["erasers", "rulers", "oranges", "muffins", "cups"])
            .context("{name} bought {a} {item} for {p} dollars each and {b} {other} for {q} dollars each.")
            .context("At the store, {name} picked up {a} {item} costing {p} dollars apiece and {b} {other} costing {q} dollars apiece.")
            .question("a*p+b*q", &["How much money did {name} spend in total?", "What was the total cost of the purchase?"])
            .question("a*p", &["How much did the {item} cost altogether?", "How much money went on the {item}?"])
            .question("a+b", &["How many items did {name} buy?", "How many things were bought in all?"])
            .question("a*p-b*q", &["How much more did {name} spend on the {item} than on the {other}?", "What is the difference between the cost of the {item} and the cost of the {other}?"])
            .question("(a*p+b*q)/(a+b)", &["What was the average price of one item?", "On average, how much did each item cost?"])
            .0,
        TemplateBuilder::new("travel")
            .slot("v", 20, 90)
            .slot("t", 2, 9)
            .slot("u", 20, 90)
            .slot("s", 2, 9)
            .words("vehicle", &["car", "bus", "truck", "train", "van"])
            .context("A {vehicle} travels at {v} kilometers per hour for {t} hours and then at {u} kilometers per hour for {s} hours.")
            .context("For {t} hours a {vehicle} moves at {v} kilometers per hour, and after that it drives {s} hours at {u} kilometers per hour.")
            .question("v*t+u*s", &["How far does the {vehicle} travel in total?", "What is the whole distance covered, in kilometers?"])
            .question("v*t", &["How far does the {vehicle} go during the first part of the trip?", "How many kilometers are covered in the first part?"])
            .question("t+s", &["How many hours does the whole trip take?", "How long is the trip in hours?"])
            .question("(v*t+u*s)/(t+s)", &["What is the average speed for the whole trip?", "On average, how fast does the {vehicle} go over the trip?"])
            .question("v*t-u*s", &["How much farther does it go in the first part than in the second part?", "How many more kilometers are covered in the first part than in the second?"])
            .0,
        TemplateBuilder::new("sharing")
            .slot("n", 30, 200)
            .slot("k", 2, 25)
            .slot("m", 3, 9)
            .words("name", NAMES)
            .words("obj", &["marbles", "stickers", "candies", "cards", "stamps"])
            .context("{name} has {n} {obj}. {name} gives {k} {obj} to a friend and puts the rest equally into {m} boxes.")
            .context("There are {n} {obj} in the bag of {name}. After handing {k} of them to a classmate, {name} splits the remaining {obj} evenly among {m} jars.")
            .question("n-k", &["How many {obj} are left after giving some away?", "How many {obj} does {name} keep?"])
            .question("(n-k)/m", &["How many {obj} go into each container?", "How many {obj} does each container hold?"])
            .question("n/m", &["How many {obj} would each container get if none were given away?", "If nothing were given away, how many {obj} would be in each container?"])
            .question("k/n", &["What fraction of the {obj} was given away?", "Which part of all the {obj} did {name} give away?"])
            .question("k", &["How many {obj} were given away?", "How many {obj} did the friend receive?"])
            .0,
        TemplateBuilder::new("savings")
            .slot("s", 10, 60)
            .slot("w", 5, 20)
            .slot("x", 11, 49)
            .slot("f", 3, 8)
            .words("name", NAMES)
            .words("thing", &["bike", "game", "jacket", "radio", "lamp"])
            .context("{name} saves {s} dollars every week for {w} weeks. Then {name} spends {x} dollars on a {thing}.")
            .context("Every week {name} puts {s} dollars into a piggy bank, for {w} weeks in a row. Afterwards a {thing} costing {x} dollars is bought with the savings.")
            .question("s*w", &["How much money did {name} save?", "How many dollars were saved in total?"])
            .question("s*w-x", &["How much money is left?", "How many dollars remain after the purchase?"])
            .question("(s*w-x)/f", &["If the money left is split equally among {f} friends, how much does each friend get?", "The remaining money is shared equally by {f} friends. How much does each one receive?"])
            .question("x/s", &["How many weeks of saving does the {thing} cost?", "How many weeks would it take to save for the {thing} alone?"])
            .0,
        TemplateBuilder::new("perimeter")
            .slot("L", 10, 99)
            .slot("W", 5, 60)
            .slot("c", 3, 30)
            .words("field", &["field", "garden", "yard", "farm", "court"])
            .context("A rectangular {field} is {L} meters long and {W} meters wide.")
            .context("The length of a rectangular {field} is {L} meters and its width is {W} meters.")
            .question("(L+W)*2", &["What is the perimeter of the {field}?", "How many meters of fence go all the way around the {field}?"])
            .question("L*W", &["What is the area of the {field}?", "How many square meters does the {field} cover?"])
            .question("L-W", &["How much longer is the length than the width?", "By how many meters does the length exceed the width?"])
            .question("(L+W)*2*c", &["If fencing costs {c} dollars per meter, how much does it cost to fence the whole {field}?", "Fence costs {c} dollars for each meter. What is the cost of a fence around the {field}?"])
            .question("L+W", &["What is the sum of the length and the width?", "How many meters are the length and the width together?"])
            .0,
        TemplateBuilder::new("ages")
            .slot("a", 16, 40)
            .slot("b", 2, 30)
            .slot("c", 2, 15)
            .words("name", NAMES)
            .words("other", FRIENDS)
            .context("{name} is {a} years old. {other} is {b} years older than {name}.")
            .context("{other} was born {b} years before {name}, who is {a} years old now.")
            .question("a+b", &["How old is {other}?", "What is the age of {other}?"])
            .question("a+(a+b)", &["What is the sum of their ages?", "How old are the two of them together?"])
            .question("a+b+c", &["How old will {other} be in {c} years?", "What will the age of {other} be after {c} years?"])
            .question("a-c", &["How old was {name} {c} years ago?", "What was the age of {name} {c} years ago?"])
            .question("a", &["How old is {name}?", "What is the age of {name}?"])
            .0,
        TemplateBuilder::new("reading")
            .slot("p", 100, 400)
            .slot("r", 5, 30)
            .slot("d", 2, 9)
            .words("name", NAMES)
            .words("book", &["novel", "book", "storybook", "textbook"])
            .context("A {book} has {p} pages. {name} reads {r} pages every day for {d} days.")
            .context("{name} is reading a {book} with {p} pages and gets through {r} pages a day for {d} days.")
            .question("r*d", &["How many pages has {name} read?", "How many pages were read so far?"])
            .question("p-r*d", &["How many pages are left to read?", "How many pages remain unread?"])
            .question("p/r", &["How many days does the whole {book} take at this pace?", "How many days would it take to read the entire {book}?"])
            .question("(p-r*d)/r", &["How many more days are needed to finish the rest of the {book}?", "How many extra days will it take to read the remaining pages?"])
            .question("p", &["How many pages are in the {book}?", "How long is the {book} in pages?"])
            .0,
    ]
}
