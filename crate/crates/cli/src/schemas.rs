//! JSON schemas for every API request and response body.

pub const ALL: [(&str, &str); 14] = [
    ("corpus", include_str!("../schemas/corpus.json")),
    ("design", include_str!("../schemas/design.json")),
    ("design_list", include_str!("../schemas/design_list.json")),
    ("enhance_request", include_str!("../schemas/enhance_request.json")),
    ("enhance_result", include_str!("../schemas/enhance_result.json")),
    ("error", include_str!("../schemas/error.json")),
    ("health", include_str!("../schemas/health.json")),
    ("image_upload", include_str!("../schemas/image_upload.json")),
    ("job", include_str!("../schemas/job.json")),
    ("job_list", include_str!("../schemas/job_list.json")),
    ("job_request", include_str!("../schemas/job_request.json")),
    ("rating", include_str!("../schemas/rating.json")),
    ("segregation", include_str!("../schemas/segregation.json")),
    ("trend_report", include_str!("../schemas/trend_report.json")),
];

pub fn get(name: &str) -> Option<&'static str> {
    ALL.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}
