use serde_json::{json, Map, Value};

/// Who may call a route.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Auth {
    None,
    Instructor,
    Capability,
}

#[derive(Debug, Clone, Copy)]
pub struct Operation {
    pub method: &'static str,
    /// OpenAPI path template (`{param}` form).
    pub path: &'static str,
    pub summary: &'static str,
    pub auth: Auth,
    pub success: u16,
    pub request: Option<&'static str>,
    pub response: &'static str,
}

const fn op(
    method: &'static str,
    path: &'static str,
    summary: &'static str,
    auth: Auth,
    success: u16,
    request: Option<&'static str>,
    response: &'static str,
) -> Operation {
    Operation {
        method,
        path,
        summary,
        auth,
        success,
        request,
        response,
    }
}

/// Every operation the router serves.
pub const ROUTES: &[Operation] = &[
    op("get", "/api/spec", "OpenAPI document", Auth::None, 200, None, "Object"),
    op(
        "post",
        "/api/assignments",
        "Upload an assignment bundle (multipart)",
        Auth::Instructor,
        201,
        Some("Bundle"),
        "IngestSummary",
    ),
    op(
        "get",
        "/api/assignments",
        "List assignment ids",
        Auth::Instructor,
        200,
        None,
        "AssignmentList",
    ),
    op(
        "post",
        "/api/assignments/{id}/jobs",
        "Start a generation job",
        Auth::Instructor,
        202,
        Some("JobRequest"),
        "JobStarted",
    ),
    op(
        "get",
        "/api/jobs/{id}",
        "Job progress",
        Auth::Instructor,
        200,
        None,
        "JobView",
    ),
    op(
        "get",
        "/api/feedback",
        "Review queue with filters and paging",
        Auth::Instructor,
        200,
        None,
        "QueuePage",
    ),
    op(
        "get",
        "/api/feedback/{rid}",
        "Feedback detail with scores and spans",
        Auth::Instructor,
        200,
        None,
        "FeedbackDetail",
    ),
    op(
        "put",
        "/api/feedback/{rid}/text",
        "Replace the feedback text",
        Auth::Instructor,
        200,
        Some("EditRequest"),
        "FeedbackDetail",
    ),
    op(
        "post",
        "/api/feedback/{rid}/approve",
        "Approve a triaged record",
        Auth::Instructor,
        200,
        Some("TransitionRequest"),
        "RecordSummary",
    ),
    op(
        "post",
        "/api/feedback/{rid}/regenerate",
        "Send a record back for regeneration",
        Auth::Instructor,
        202,
        Some("TransitionRequest"),
        "Regenerating",
    ),
    op(
        "post",
        "/api/feedback/{rid}/viewed",
        "Student marks feedback as viewed",
        Auth::Capability,
        200,
        None,
        "StudentView",
    ),
    op(
        "post",
        "/api/feedback/{rid}/flag",
        "Student flags feedback",
        Auth::Capability,
        200,
        Some("FlagRequest"),
        "StudentView",
    ),
    op(
        "post",
        "/api/deliveries",
        "Deliver approved records",
        Auth::Instructor,
        200,
        Some("DeliveryRequest"),
        "DeliveryReport",
    ),
    op(
        "get",
        "/api/analytics/compare",
        "Compare score distributions by factor",
        Auth::Instructor,
        200,
        None,
        "CompareReport",
    ),
];

fn parameters(o: &Operation) -> Vec<Value> {
    let mut params: Vec<Value> = o
        .path
        .split('/')
        .filter_map(|seg| seg.strip_prefix('{').and_then(|s| s.strip_suffix('}')))
        .map(|name| json!({"name": name, "in": "path", "required": true, "schema": {"type": "string"}}))
        .collect();
    let query: &[(&str, &str)] = match (o.method, o.path) {
        ("get", "/api/feedback") => &[
            ("assignment_id", "string"),
            ("state", "string"),
            ("triage", "string"),
            ("achievement", "string"),
            ("variant", "string"),
            ("sort", "string"),
            ("offset", "integer"),
            ("limit", "integer"),
        ],
        ("get", "/api/analytics/compare") => &[("factor", "string"), ("assignment_id", "string")],
        _ if o.auth == Auth::Capability => &[("token", "string")],
        _ => &[],
    };
    params.extend(
        query
            .iter()
            .map(|(name, ty)| json!({"name": name, "in": "query", "required": false, "schema": {"type": ty}})),
    );
    params
}

fn schema_ref(name: &str) -> Value {
    json!({ "$ref": format!("#/components/schemas/{name}") })
}

fn operation(o: &Operation) -> Value {
    let mut v = json!({
        "summary": o.summary,
        "operationId": format!("{}_{}", o.method, o.path.trim_start_matches("/api/").replace(['/', '{', '}'], "_")),
        "parameters": parameters(o),
        "responses": {
            o.success.to_string(): {
                "description": "success",
                "content": {"application/json": {"schema": schema_ref(o.response)}}
            },
            "default": {
                "description": "error",
                "content": {"application/json": {"schema": schema_ref("ApiError")}}
            }
        }
    });
    if let Some(req) = o.request {
        let media = if req == "Bundle" {
            "multipart/form-data"
        } else {
            "application/json"
        };
        v["requestBody"] = json!({"content": {media: {"schema": schema_ref(req)}}});
    }
    v["security"] = match o.auth {
        Auth::None => json!([]),
        Auth::Instructor => json!([{"bearer": []}]),
        Auth::Capability => json!([{"capability": []}]),
    };
    v
}

fn object(props: &[(&str, Value)], required: &[&str]) -> Value {
    let props: Map<String, Value> = props.iter().map(|(k, v)| ((*k).to_owned(), v.clone())).collect();
    json!({"type": "object", "properties": props, "required": required})
}

fn schemas() -> Value {
    let s = || json!({"type": "string"});
    let i = || json!({"type": "integer"});
    let obj = || json!({"type": "object"});
    json!({
        "ApiError": object(&[("status", i()), ("code", s()), ("message", s()), ("details", obj())], &["status", "code", "message"]),
        "Object": obj(),
        "Bundle": object(&[
            ("assignment.json", json!({"type": "string", "format": "binary"})),
            ("submissions.csv", json!({"type": "string", "format": "binary"})),
            ("roster.csv", json!({"type": "string", "format": "binary"})),
        ], &["assignment.json", "submissions.csv", "roster.csv"]),
        "IngestSummary": object(&[("assignment_id", s()), ("title", s()), ("tasks", i()), ("students", i())], &["assignment_id"]),
        "AssignmentList": object(&[("assignments", json!({"type": "array", "items": s()}))], &["assignments"]),
        "JobRequest": object(&[("variant", s()), ("parallelism", i()), ("student_ids", json!({"type": "array", "items": s()}))], &[]),
        "JobStarted": object(&[("job_id", s()), ("job", obj())], &["job_id"]),
        "JobView": object(&[("job", obj()), ("counts", obj()), ("records", json!({"type": "array"}))], &["job"]),
        "QueuePage": object(&[("total", i()), ("offset", i()), ("limit", i()), ("items", json!({"type": "array", "items": schema_ref("RecordSummary")}))], &["total", "items"]),
        "RecordSummary": object(&[("record_id", s()), ("state", s()), ("version", i()), ("triage", s()), ("colour", s()), ("mean_score", json!({"type": "number"}))], &["record_id", "state", "version"]),
        "FeedbackDetail": object(&[("record_id", s()), ("version", i()), ("feedback_text", s()), ("scores", json!({"type": "array"})), ("tasks", json!({"type": "array"})), ("audit", json!({"type": "array"}))], &["record_id", "version"]),
        "EditRequest": object(&[("edited_text", s()), ("version", i())], &["edited_text"]),
        "TransitionRequest": object(&[("version", i()), ("note", s())], &[]),
        "Regenerating": object(&[("record", schema_ref("RecordSummary")), ("job_id", s())], &["record", "job_id"]),
        "StudentView": object(&[("record_id", s()), ("state", s())], &["record_id", "state"]),
        "FlagRequest": object(&[("comment", s())], &[]),
        "DeliveryRequest": object(&[("record_ids", json!({"type": "array", "items": s()}))], &["record_ids"]),
        "DeliveryReport": object(&[("delivered", json!({"type": "array"})), ("failed", json!({"type": "array"}))], &["delivered", "failed"]),
        "CompareReport": obj(),
    })
}

/// The OpenAPI 3 document for [`ROUTES`].
pub fn document() -> Value {
    let mut paths = Map::new();
    for o in ROUTES {
        let entry = paths.entry(o.path).or_insert_with(|| json!({}));
        entry[o.method] = operation(o);
    }
    json!({
        "openapi": "3.0.3",
        "info": {"title": "Feedback Copilot API", "version": env!("CARGO_PKG_VERSION")},
        "paths": paths,
        "components": {
            "schemas": schemas(),
            "securitySchemes": {
                "bearer": {"type": "http", "scheme": "bearer"},
                "capability": {"type": "apiKey", "in": "query", "name": "token"}
            }
        }
    })
}
