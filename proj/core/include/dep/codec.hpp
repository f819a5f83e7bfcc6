#pragma once

#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "dep/protocol.hpp"

namespace dep {

// JSON values without the protocol_version tag; used for nested records.
nlohmann::json to_json_value(const ModelCard& v);
nlohmann::json to_json_value(const NormalizationSpec& v);
nlohmann::json to_json_value(const MetricBinding& v);
nlohmann::json to_json_value(const DatasetCard& v);
nlohmann::json to_json_value(const SampleEnvelope& v);
nlohmann::json to_json_value(const PredictionRecord& v);
nlohmann::json to_json_value(const SampleScore& v);
nlohmann::json to_json_value(const EvaluationReport& v);
nlohmann::json to_json_value(const InferenceRequest& v);
nlohmann::json to_json_value(const AdapterResponse& v);
nlohmann::json to_json_value(const DatasetList& v);
nlohmann::json to_json_value(const SamplePage& v);
nlohmann::json to_json_value(const OpenEvaluation& v);
nlohmann::json to_json_value(const Submission& v);
nlohmann::json to_json_value(const SubmissionAck& v);
nlohmann::json to_json_value(const ErrorBody& v);

/// Throws Error(unprocessable) naming the first offending path. `path` is
/// the location of `j` inside the enclosing document ("" for the root).
template <typename T>
T from_json_value(const nlohmann::json& j, const std::string& path = {});

template <>
ModelCard from_json_value<ModelCard>(const nlohmann::json& j, const std::string& path);
template <>
NormalizationSpec from_json_value<NormalizationSpec>(const nlohmann::json& j, const std::string& path);
template <>
MetricBinding from_json_value<MetricBinding>(const nlohmann::json& j, const std::string& path);
template <>
DatasetCard from_json_value<DatasetCard>(const nlohmann::json& j, const std::string& path);
template <>
SampleEnvelope from_json_value<SampleEnvelope>(const nlohmann::json& j, const std::string& path);
template <>
PredictionRecord from_json_value<PredictionRecord>(const nlohmann::json& j, const std::string& path);
template <>
SampleScore from_json_value<SampleScore>(const nlohmann::json& j, const std::string& path);
template <>
EvaluationReport from_json_value<EvaluationReport>(const nlohmann::json& j, const std::string& path);
template <>
InferenceRequest from_json_value<InferenceRequest>(const nlohmann::json& j, const std::string& path);
template <>
AdapterResponse from_json_value<AdapterResponse>(const nlohmann::json& j, const std::string& path);
template <>
DatasetList from_json_value<DatasetList>(const nlohmann::json& j, const std::string& path);
template <>
SamplePage from_json_value<SamplePage>(const nlohmann::json& j, const std::string& path);
template <>
OpenEvaluation from_json_value<OpenEvaluation>(const nlohmann::json& j, const std::string& path);
template <>
Submission from_json_value<Submission>(const nlohmann::json& j, const std::string& path);
template <>
SubmissionAck from_json_value<SubmissionAck>(const nlohmann::json& j, const std::string& path);
template <>
ErrorBody from_json_value<ErrorBody>(const nlohmann::json& j, const std::string& path);

/// Serializes a top-level message: UTF-8 JSON carrying protocol_version.
template <typename T>
std::string encode_message(const T& v) {
  nlohmann::json j = to_json_value(v);
  j["protocol_version"] = std::string(kProtocolVersion);
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

nlohmann::json parse_message_json(std::string_view bytes);

/// Inverse of encode_message. A protocol_version other than "dep/1" is
/// rejected; an absent one is tolerated.
template <typename T>
T decode_message(std::string_view bytes) {
  return from_json_value<T>(parse_message_json(bytes));
}

std::string dump_compact(const nlohmann::json& j);

}  // namespace dep
