#include "merbench/error.hpp"

namespace merbench {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::ManifestParse: return "MANIFEST_PARSE";
    case ErrorCode::DuplicateId: return "DUPLICATE_ID";
    case ErrorCode::EmptyDataset: return "EMPTY_DATASET";
    case ErrorCode::CapabilityMismatch: return "CAPABILITY_MISMATCH";
    case ErrorCode::AuthMissing: return "AUTH_MISSING";
    case ErrorCode::RetriesExhausted: return "RETRIES_EXHAUSTED";
    case ErrorCode::HttpError: return "HTTP_ERROR";
    case ErrorCode::MockUnscripted: return "MOCK_UNSCRIPTED";
    case ErrorCode::MockScriptParse: return "MOCK_SCRIPT_PARSE";
    case ErrorCode::ExtractorFailed: return "EXTRACTOR_FAILED";
    case ErrorCode::MissingFrame: return "MISSING_FRAME";
    case ErrorCode::TemplateError: return "TEMPLATE_ERROR";
    case ErrorCode::MissingMetadata: return "MISSING_METADATA";
    case ErrorCode::EmptyEvidence: return "EMPTY_EVIDENCE";
    case ErrorCode::Unparseable: return "UNPARSEABLE";
    case ErrorCode::CoverageError: return "COVERAGE_ERROR";
    case ErrorCode::EmptyEvaluation: return "EMPTY_EVALUATION";
    case ErrorCode::ConfigError: return "CONFIG_ERROR";
    case ErrorCode::EmptyMatrix: return "EMPTY_MATRIX";
    case ErrorCode::LayoutMismatch: return "LAYOUT_MISMATCH";
    case ErrorCode::IoError: return "IO_ERROR";
  }
  return "UNKNOWN";
}

}  // namespace merbench
