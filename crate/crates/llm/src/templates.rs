use fairguide_core::{AttributeAssignment, PromptText};
use sha2::{Digest, Sha256};

use crate::error::{LlmError, Result};
use crate::transport::ChatMessage;

/// System prompt for attribute detection.
pub const DETECTION_TEMPLATE: &str = r#"Please read the following task description carefully. If you do not follow the specified format, your answer will not be accepted.

Task

Read the descriptive text carefully. Think about what kinds of biases that could appear in an image (stereotypes, assumptions, or implicit characteristics) may be implied.

Important Rules

You must create at least 2 categories.
Each category must list 2 or more attributes.
Try to list as many categories and attributes as you can think of.
Format must follow:

{
  "category": ["attribute1", "attribute2", ...],
  "category": ["attribute1", "attribute2", ...],
}

Do not include any text outside of the JSON output.
If you do not follow this format, your answer will be rejected.

Examples
If the text is: "a firefighter"
Correct format:

{
  "gender": ["male", "female", "non-binary"],
  "age": ["young adult", "middle-aged", "elderly"],
  "race": ["White", "Asian", "Black", "Hispanic"],
}

Incorrect format:

{
  "race": "Asian"
}

If the text is: "a quiet forest"
Correct format:

{
  "time_of_day": ["morning", "afternoon", "evening", "night", "dawn", "dusk"],
  "season": ["spring", "summer", "autumn", "winter"],
  "weather": ["sunny", "cloudy", "rainy", "snowy", "foggy", "misty"],
}

Incorrect format: morning"#;

/// System prompt for attribute fusion.
pub const FUSION_TEMPLATE: &str = r#"Please read the following task description carefully. If you do not follow the specified format, your answer will not be accepted.

Task

Rewrite the original prompt so that it naturally integrates all specified attributes.

Important Rules

- Output must contain only the rewritten prompt text.
- Do not add, expand, or explain beyond the original prompt and attributes.
- Do not include extra descriptive words, embellishments, or commentary.
- Do not include explanations, metadata, or formatting outside of the rewritten prompt.
- The rewritten sentence must be as concise as possible, while preserving the original meaning and smoothly integrating all attributes.

Format

<rewritten prompt text>

If you do not follow this format, your answer will be rejected.

Examples
If the input is:

{
  Original prompt: "A portrait of a person reading a book"
  Attributes to include: "gender: female, age: elderly"
}

Correct format:

{
  A portrait of an elderly female person reading a book
}

Incorrect format:

{
  A detailed portrait depicting an elderly female person seated in a quiet and serene setting, holding a book gently in her hands while reading it with focused attention and calm concentration.
}"#;

/// Short SHA-256 digest identifying a template revision in cache keys.
pub fn template_hash(template: &str) -> String {
    hex::encode(&Sha256::digest(template.as_bytes())[..8])
}

pub fn build_detection_request(y: &PromptText) -> Vec<ChatMessage> {
    vec![ChatMessage::system(DETECTION_TEMPLATE), ChatMessage::user(y.as_str())]
}

/// User turn for fusion, shaped like the template's example input.
pub fn fusion_user_message(y: &PromptText, assignment: &AttributeAssignment) -> Result<String> {
    if assignment.is_empty() {
        return Err(LlmError::EmptyAssignment);
    }
    Ok(format!(
        "Original prompt: \"{}\"\nAttributes to include: \"{}\"",
        y.as_str(),
        assignment.describe()
    ))
}

pub fn build_fusion_request(y: &PromptText, assignment: &AttributeAssignment) -> Result<Vec<ChatMessage>> {
    Ok(vec![ChatMessage::system(FUSION_TEMPLATE), ChatMessage::user(fusion_user_message(y, assignment)?)])
}
