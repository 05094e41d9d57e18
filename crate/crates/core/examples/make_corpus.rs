//! Regenerates the bundled synthetic corpus under `tests/data/synthetic`:
//! screens, images, scripted LLM fixtures, an advanced eval set and the
//! expected pipeline manifest hash.
//!
//! cargo run -p screenkit --example make_corpus

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use image::{Rgba, RgbaImage};
use rand::seq::SliceRandom;
use rand::Rng;
use regex::Regex;
use serde_json::json;

use screenkit::advgen::{run_advgen, select_test_pairs, AdvGenConfig, AdvTemplates};
use screenkit::annotation::{Platform, ScreenAnnotation, UiElement, UiType};
use screenkit::eval::report::Prediction;
use screenkit::eval::{judge_records, EvalRecord, JudgeRubric};
use screenkit::grouping::{group_screen, GroupingConfig};
use screenkit::io::{to_pretty_json, write_bytes, write_jsonl};
use screenkit::llm::{LlmClient, LlmError, RecordingClient};
use screenkit::pipeline::{manifest_hash, run_pipeline, RunConfig};
use screenkit::seeds::{derive_seed, rng_for, stable_hash};
use screenkit::som::encode_png;
use screenkit::task::{Split, Task, TaskSample};
use screenkit::taskgen::PromptPool;
use screenkit::BBox;

const SEED: u64 = 7;
const COUNTS: [usize; 20] = [2, 3, 5, 8, 14, 15, 6, 4, 10, 12, 3, 7, 9, 11, 2, 13, 16, 5, 6, 8];
const IPHONE_DIMS: [(u32, u32); 3] = [(414, 896), (375, 812), (896, 414)];
const ANDROID_DIMS: [(u32, u32); 2] = [(360, 640), (540, 960)];
const WORDS: [&str; 16] = [
    "Settings", "Profile", "Sign in", "Search", "Cart", "Home", "Messages", "Continue", "Cancel", "Save",
    "Notifications", "Privacy", "Help", "Order history", "Today", "Settings",
];
const LONG_TEXT: &str = "Terms and conditions apply to every purchase made through this app today";
const ICONS: [&str; 10] = ["search", "cart", "home", "settings", "share", "favorite", "menu", "close", "person", "notifications"];

#[derive(Clone, Copy)]
enum Kind {
    Text,
    LongText,
    Paragraph,
    Button,
    Icon,
    Figure,
    Checkbox,
    Toggle,
    Tab,
}

const KINDS: [Kind; 9] = [
    Kind::Text,
    Kind::LongText,
    Kind::Paragraph,
    Kind::Button,
    Kind::Icon,
    Kind::Figure,
    Kind::Checkbox,
    Kind::Toggle,
    Kind::Tab,
];

fn out_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/synthetic")
}

fn make_screen(i: usize) -> ScreenAnnotation {
    let mut rng = rng_for(SEED, &format!("corpus:{i}"));
    let platform = if i % 2 == 0 { Platform::Iphone } else { Platform::Android };
    let (w, h) = match platform {
        Platform::Iphone => IPHONE_DIMS[(i / 2) % IPHONE_DIMS.len()],
        Platform::Android => ANDROID_DIMS[(i / 2) % ANDROID_DIMS.len()],
    };
    let target = COUNTS[i];
    let slot = h as f64 / (target as f64 + 1.0);
    let mut elements = Vec::new();
    let mut k = 0usize;
    let mut row = 0usize;
    while elements.len() < target {
        let top = ((row as f64 + 0.5) * slot).floor();
        let x1 = (w as f64 * rng.gen_range(0.04..0.2)).floor();
        let x2 = (w as f64 * rng.gen_range(0.55..0.95)).floor();
        let kind = *KINDS.choose(&mut rng).unwrap();
        let remaining = target - elements.len();
        let mut push = |ty: UiType, text: Option<&str>, b: [f64; 4], extra: Option<&str>| {
            let mut e = UiElement::new(format!("e{k}"), ty, text, BBox::from(b));
            e.icon_class = extra.map(str::to_string);
            elements.push(e);
            k += 1;
        };
        let full = [x1, top, x2, (top + slot * 0.45).floor()];
        match kind {
            Kind::Paragraph | Kind::Figure if remaining < 2 => push(UiType::Text, Some(WORDS.choose(&mut rng).unwrap()), full, None),
            Kind::Text => push(UiType::Text, Some(WORDS.choose(&mut rng).unwrap()), full, None),
            Kind::LongText => push(UiType::Text, Some(LONG_TEXT), full, None),
            Kind::Paragraph => {
                let l1 = [x1, top, x2, (top + slot * 0.2).floor()];
                let l2 = [x1, (top + slot * 0.25).floor(), x2 - 10.0, (top + slot * 0.45).floor()];
                push(UiType::Text, Some("Your order is on"), l1, None);
                push(UiType::Text, Some("its way"), l2, None);
            }
            Kind::Button => push(UiType::Button, Some(WORDS.choose(&mut rng).unwrap()), full, None),
            Kind::Icon => {
                let side = (slot * 0.45).floor().min(48.0);
                let class = ICONS.choose(&mut rng).unwrap();
                push(UiType::Icon, None, [x1, top, x1 + side, top + side], Some(class));
            }
            Kind::Figure => {
                let pic = [x1, top, x2, (top + slot * 0.3).floor()];
                let cap = [x1, (top + slot * 0.33).floor(), x2, (top + slot * 0.45).floor()];
                push(UiType::Picture, None, pic, None);
                push(UiType::Text, Some("Fresh picks"), cap, None);
            }
            Kind::Checkbox => {
                let state = if rng.gen_bool(0.5) { "Checkbox (Checked)" } else { "Checkbox (Unchecked)" };
                push(UiType::canonicalize(state), Some("Remember me"), full, None);
            }
            Kind::Toggle => push(UiType::Toggle, Some("Dark mode"), full, None),
            Kind::Tab => push(UiType::Tab, Some(WORDS.choose(&mut rng).unwrap()), full, None),
        }
        row += 1;
    }
    ScreenAnnotation {
        screen_id: format!("syn{:02}{}", i, platform.suffix()),
        platform,
        width: w,
        height: h,
        elements,
        image_path: None,
        extra: Default::default(),
    }
}

fn draw(screen: &ScreenAnnotation) -> RgbaImage {
    let shade = 230 + (stable_hash(&[&screen.screen_id]) % 20) as u8;
    let mut img = RgbaImage::from_pixel(screen.width, screen.height, Rgba([shade, shade, 250, 255]));
    for e in &screen.elements {
        let color = match e.ui_type {
            UiType::Text => Rgba([40, 40, 40, 255]),
            UiType::Button => Rgba([30, 120, 220, 255]),
            UiType::Icon => Rgba([200, 80, 40, 255]),
            UiType::Picture => Rgba([90, 170, 90, 255]),
            _ => Rgba([150, 150, 150, 255]),
        };
        let b = e.bbox;
        for y in b.y1 as u32..b.y2 as u32 {
            for x in b.x1 as u32..b.x2 as u32 {
                img.put_pixel(x, y, color);
            }
        }
    }
    img
}

fn detection_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(\w+)(?: (.*))? (\[\d+, \d+, \d+, \d+\])$").unwrap())
}

/// Stands in for a chat model: answers from the detection list in the prompt.
struct ScriptedGenerator;

impl ScriptedGenerator {
    fn detections(prompt: &str) -> Vec<(String, Option<String>, String)> {
        let block = prompt.split("Detections:\n").nth(1).unwrap_or("");
        block
            .lines()
            .take_while(|l| !l.trim().is_empty())
            .filter_map(|l| {
                let c = detection_line().captures(l)?;
                Some((c[1].to_string(), c.get(2).map(|m| m.as_str().to_string()), c[3].to_string()))
            })
            .collect()
    }

    fn jitter(token: &str) -> String {
        let nums: Vec<u32> = token.trim_matches(['[', ']']).split(", ").map(|n| n.parse().unwrap()).collect();
        format!("[{}, {}, {}, {}]", nums[0] + 3, nums[1], nums[2], nums[3].saturating_sub(2))
    }
}

impl LlmClient for ScriptedGenerator {
    fn send(&self, prompt: &str, _system: &str) -> Result<String, LlmError> {
        let dets = Self::detections(prompt);
        let h = stable_hash(&[prompt]);
        let label = |d: &(String, Option<String>, String)| match &d.1 {
            Some(t) => format!("{} {}", t, d.0.to_lowercase()),
            None => d.0.to_lowercase(),
        };
        let conv = prompt.contains("Design a conversation");
        if conv && h % 9 == 0 {
            return Ok(r#"[{"role": "user", "text": "Where is it?"}, {"role": "assistant", "text": "Right here [1200, 5, 10, 20]."}]"#.into());
        }
        if conv && h % 9 == 1 {
            return Ok("Sure, here is a conversation about the screen.".into());
        }
        if prompt.contains("interacting with this screen") {
            let picks = [0, dets.len() / 2, dets.len() - 1];
            let mut turns = Vec::new();
            for (n, &i) in picks.iter().enumerate() {
                let d = &dets[i];
                let tok = if (h >> n) % 3 == 0 { Self::jitter(&d.2) } else { d.2.clone() };
                turns.push(json!({"role": "user", "text": format!("How do I use the {}?", label(d))}));
                let answer = if h % 9 == 2 && n == 1 {
                    "You cannot do that here.".to_string()
                } else {
                    format!("Tap the {} {} to use it.", label(d), tok)
                };
                turns.push(json!({"role": "assistant", "text": answer}));
            }
            return Ok(serde_json::to_string(&turns).unwrap());
        }
        if conv {
            let first = &dets[0];
            let last = &dets[dets.len() - 1];
            let turns = json!([
                {"role": "user", "text": "What is at the top of the screen?"},
                {"role": "assistant", "text": format!("At the top there is a {} {}.", label(first), first.2)},
                {"role": "user", "text": "And at the bottom?"},
                {"role": "assistant", "text": format!("The bottom shows a {} {}.", label(last), last.2)},
            ]);
            return Ok(format!("```json\n{turns}\n```"));
        }
        let names: Vec<String> = dets.iter().take(4).map(label).collect();
        if prompt.contains("Infer the purpose") {
            return Ok(format!(
                "This screen lets the user work with {}. The {} suggests it is part of a larger app flow.",
                names.join(" and "),
                names[0]
            ));
        }
        Ok(format!(
            "The screen contains {} elements. From top to bottom it shows {}. The layout is a simple vertical list.",
            dets.len(),
            names.join(", ")
        ))
    }

    fn model(&self) -> &str {
        "scripted-generator"
    }
}

/// Stands in for the judge model: a stable pseudo-score per answer.
struct ScriptedJudge;

impl LlmClient for ScriptedJudge {
    fn send(&self, prompt: &str, _system: &str) -> Result<String, LlmError> {
        let answer = prompt.split("Answer:\n").nth(1).and_then(|s| s.split("\n\nReply").next()).unwrap_or("");
        let score = 4 + stable_hash(&[answer]) % 6 + u64::from(answer.len() > 60);
        Ok(format!("Score: {score}/10"))
    }

    fn model(&self) -> &str {
        "scripted-judge"
    }
}

fn main() {
    let out = out_dir();
    let _ = fs::remove_dir_all(&out);
    let screens: Vec<ScreenAnnotation> = (0..COUNTS.len()).map(make_screen).collect();
    for s in &screens {
        s.validate().expect("valid synthetic screen");
        write_bytes(&out.join(format!("screens/{}.json", s.screen_id)), &to_pretty_json(s).unwrap()).unwrap();
        write_bytes(&out.join(format!("images/{}.png", s.screen_id)), &encode_png(&draw(s)).unwrap()).unwrap();
    }

    let grouped: Vec<ScreenAnnotation> = screens.iter().map(|s| group_screen(s, &GroupingConfig::default())).collect();
    let generator = RecordingClient::new(ScriptedGenerator, out.join("fixtures/advgen")).unwrap();
    let cfg = AdvGenConfig { seed: derive_seed(SEED, "advgen"), max_in_flight: 1, split: Split::Train, ..Default::default() };
    let mut advanced: Vec<TaskSample> = Vec::new();
    for task in Task::ADVANCED {
        let res = run_advgen(&grouped, task, &generator, &AdvTemplates::builtin(), &PromptPool::builtin(), &cfg).unwrap();
        println!("{task}: {:?}", res.report);
        advanced.extend(res.samples);
    }

    let gold: Vec<TaskSample> = advanced.iter().flat_map(|s| select_test_pairs(s, SEED)).collect();
    let preds: Vec<Prediction> = gold
        .iter()
        .map(|s| {
            let label = &s.turns.last().unwrap().text;
            let prediction = match stable_hash(&[&s.sample_id]) % 3 {
                0 => label.clone(),
                1 => label.split(". ").next().unwrap().to_string(),
                _ => "I am not sure what this screen does.".to_string(),
            };
            Prediction { sample_id: s.sample_id.clone(), prediction }
        })
        .collect();
    write_jsonl(&out.join("eval/advanced_gold.jsonl"), &gold).unwrap();
    write_jsonl(&out.join("eval/advanced_pred.jsonl"), &preds).unwrap();
    let mut records: Vec<EvalRecord> = gold.iter().zip(&preds).map(|(g, p)| EvalRecord::from_sample(g, &p.prediction)).collect();
    let judge = RecordingClient::new(ScriptedJudge, out.join("fixtures/judge")).unwrap();
    println!("judge: {:?}", judge_records(&mut records, &judge, &JudgeRubric::builtin(), 1));

    let config = json!({
        "seed": SEED,
        "annotations": "screens",
        "images": "images",
        "fixtures": "fixtures/advgen",
        "llm_mode": "replay",
        "advanced": true,
        "partition": true,
        "som": true,
        "mixture": {
            "seed": SEED,
            "total": 24,
            "pools": [
                {"name": "iphone_find_text", "path": "elementary/iphone/find_text.jsonl", "weight": 1.0},
                {"name": "android_widget_classification", "path": "elementary/android/widget_classification.jsonl", "weight": 1.0},
                {"name": "conv_interaction", "path": "advanced/conv_interaction.jsonl", "weight": 0.5}
            ]
        }
    });
    let config_path = out.join("pipeline.json");
    write_bytes(&config_path, &to_pretty_json(&config).unwrap()).unwrap();

    let (cfg, base) = RunConfig::load(&config_path).unwrap();
    let tmp = std::env::temp_dir().join("screenkit-make-corpus");
    let _ = fs::remove_dir_all(&tmp);
    let manifest = run_pipeline(&cfg, &base, &tmp).expect("pipeline");
    let hash = manifest_hash(&tmp).unwrap();
    write_bytes(&out.join("expected_manifest.sha256"), format!("{hash}\n").as_bytes()).unwrap();
    println!("{} files, manifest {hash}", manifest.files.len());
}
