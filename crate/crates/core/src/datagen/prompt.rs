use serde::Serialize;
use serde_json::Value;

use super::DatagenError;
use crate::corpus::PairRecord;

#[derive(Serialize)]
struct Thread<'a> {
    title: &'a str,
    body: &'a str,
}

/// The translation instruction followed by the thread as a JSON object.
pub fn build_prompt(record: &PairRecord, target_language: &str) -> Result<String, DatagenError> {
    if record.src_title.trim().is_empty() || record.src_body.trim().is_empty() {
        return Err(DatagenError::Precondition {
            id: record.id.clone(),
            message: "source title and body must be non-empty".into(),
        });
    }
    let thread = serde_json::to_string(&Thread {
        title: &record.src_title,
        body: &record.src_body,
    })
    .expect("strings serialize");
    Ok(format!(
        "Translate the given Reddit thread from English to {target_language}. \
         Return a json with 'title','body' keys. \
         Make sure the named entities are kept in English and terms are translated properly. \
         Only provide the translation, nothing else.\n\n{thread}"
    ))
}

/// Finds the first JSON object in `text` that has string `title` and
/// `body` fields, skipping any surrounding prose or code fences.
pub fn extract_translation(text: &str) -> Option<(String, String)> {
    for (start, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(obj))) = stream.next() {
            if let (Some(Value::String(t)), Some(Value::String(b))) = (obj.get("title"), obj.get("body")) {
                if !t.trim().is_empty() && !b.trim().is_empty() {
                    return Some((t.clone(), b.clone()));
                }
            }
        }
    }
    None
}
