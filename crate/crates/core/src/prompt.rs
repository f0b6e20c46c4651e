//! Prompt construction for zero-shot and few-shot sarcasm analysis.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    #[default]
    Zh,
    En,
}

impl FromStr for Language {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zh" | "cn" | "chinese" => Ok(Language::Zh),
            "en" | "english" => Ok(Language::En),
            other => Err(Error::Config(format!("unknown language {other:?}"))),
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Language::Zh => "zh",
            Language::En => "en",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DemoBlock {
    pub id: String,
    pub text: String,
    pub image: Option<String>,
    pub label: u8,
    pub target: String,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QueryBlock {
    pub id: String,
    pub text: String,
    pub image: Option<String>,
}

/// A piece of a rendered prompt: text, or an image referenced by path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptPart {
    Text(String),
    Image(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptBundle {
    pub language: Language,
    pub instruction: String,
    pub demos: Vec<DemoBlock>,
    pub query: QueryBlock,
}

fn format_instruction(lang: Language) -> &'static str {
    match lang {
        Language::Zh => {
            "请先单独一行给出“是否讽刺: 是/否”，再按如下结构输出：\n\
             <result><target>讽刺对象</target><explanation>讽刺解释</explanation></result>\n\
             不含讽刺时讽刺对象与讽刺解释留空。"
        }
        Language::En => {
            "First state \"Sarcastic: yes/no\" on its own line, then answer in this structure:\n\
             <result><target>target</target><explanation>explanation</explanation></result>\n\
             Leave target and explanation empty when there is no sarcasm."
        }
    }
}

pub fn build_prompt(demos: &[Sample], query: &Sample, lang: Language) -> Result<PromptBundle> {
    let mut blocks = Vec::with_capacity(demos.len());
    for demo in demos {
        demo.check_demonstration()?;
        let label = demo.label.unwrap_or(0);
        blocks.push(DemoBlock {
            id: demo.id.clone(),
            text: demo.text.clone(),
            image: demo.image_path.clone(),
            label,
            target: demo.target.clone().unwrap_or_default(),
            explanation: demo.explanation.clone().unwrap_or_default(),
        });
    }
    Ok(PromptBundle {
        language: lang,
        instruction: format_instruction(lang).to_string(),
        demos: blocks,
        query: QueryBlock {
            id: query.id.clone(),
            text: query.text.clone(),
            image: query.image_path.clone(),
        },
    })
}

impl PromptBundle {
    pub fn is_zero_shot(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn image_count(&self) -> usize {
        self.demos.iter().filter(|d| d.image.is_some()).count()
            + usize::from(self.query.image.is_some())
    }

    pub fn demo_ids(&self) -> Vec<&str> {
        self.demos.iter().map(|d| d.id.as_str()).collect()
    }

    /// Interleaved text and image parts in prompt order.
    pub fn parts(&self) -> Vec<PromptPart> {
        let mut parts = PartBuilder::default();
        let lang = self.language;
        if self.demos.is_empty() {
            parts.image(&self.query.image);
            parts.text(&match lang {
                Language::Zh => format!(
                    "给你一张图片，图片配文为:{}。分析该图文对是否含有讽刺，并给出讽刺对象和解释。\n",
                    self.query.text
                ),
                Language::En => format!(
                    "Given an image with caption: {}. Analyze whether this pair contains sarcasm, and provide the target and explanation.\n",
                    self.query.text
                ),
            });
        } else {
            for demo in &self.demos {
                parts.text(match lang {
                    Language::Zh => "Example: 输入：配文:",
                    Language::En => "Example: Input: text: ",
                });
                parts.text(&demo.text);
                parts.text(match lang {
                    Language::Zh => "; 图片:",
                    Language::En => "; image: ",
                });
                parts.image_or_none(&demo.image, lang);
                let yes_no = match (lang, demo.label == 1) {
                    (Language::Zh, true) => "是",
                    (Language::Zh, false) => "否",
                    (Language::En, true) => "yes",
                    (Language::En, false) => "no",
                };
                let none = match lang {
                    Language::Zh => "无",
                    Language::En => "none",
                };
                let target = if demo.label == 1 {
                    demo.target.as_str()
                } else {
                    none
                };
                let exp = if demo.label == 1 {
                    demo.explanation.as_str()
                } else {
                    none
                };
                parts.text(&match lang {
                    Language::Zh => {
                        format!(". 输出：是否讽刺:{yes_no}; 讽刺对象:{target}; 讽刺解释:{exp}.\n")
                    }
                    Language::En => format!(
                        ". Output: sarcastic: {yes_no}; target: {target}; explanation: {exp}.\n"
                    ),
                });
            }
            parts.text(match lang {
                Language::Zh => "Test: 给你一张图片,分析该图片是否含有讽刺，并给出讽刺对象和解释。配文:",
                Language::En => "Test: Given an image, analyze whether it contains sarcasm and provide the target/explanation. Caption: ",
            });
            parts.text(&self.query.text);
            parts.text("\n");
            parts.image(&self.query.image);
        }
        parts.text(&self.instruction);
        parts.finish()
    }

    /// Text-only rendering with `<image:path>` placeholders.
    pub fn render_text(&self) -> String {
        self.parts()
            .into_iter()
            .map(|p| match p {
                PromptPart::Text(t) => t,
                PromptPart::Image(path) => format!("<image:{path}>"),
            })
            .collect()
    }
}

#[derive(Default)]
struct PartBuilder {
    parts: Vec<PromptPart>,
}

impl PartBuilder {
    fn text(&mut self, s: &str) {
        if s.is_empty() {
            return;
        }
        if let Some(PromptPart::Text(last)) = self.parts.last_mut() {
            last.push_str(s);
        } else {
            self.parts.push(PromptPart::Text(s.to_string()));
        }
    }

    fn image(&mut self, path: &Option<String>) {
        if let Some(p) = path {
            self.parts.push(PromptPart::Image(p.clone()));
        }
    }

    fn image_or_none(&mut self, path: &Option<String>, lang: Language) {
        match path {
            Some(_) => self.image(path),
            None => self.text(match lang {
                Language::Zh => "无",
                Language::En => "none",
            }),
        }
    }

    fn finish(self) -> Vec<PromptPart> {
        self.parts
    }
}
