#pragma once

#include <cctype>
#include <cstdlib>
#include <string>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "ctis/builders.hpp"
#include "ctis/cprt.hpp"
#include "ctis/error.hpp"

namespace ctis {

// Minimal chat-completion client: one user message, temperature 0, reply text
// taken from choices[0].message.content. Credentials come only from the
// CTIS_EXTRACTOR_TOKEN environment variable (sent as a bearer token).
struct RemoteConfig {
  std::string base_url;                      // e.g. http://127.0.0.1:8080
  std::string path = "/v1/chat/completions";
  std::string model = "extractor";
  int timeout_seconds = 30;
};

inline constexpr const char* kRemoteTokenEnv = "CTIS_EXTRACTOR_TOKEN";

class RemoteClient {
 public:
  explicit RemoteClient(RemoteConfig cfg) : cfg_(std::move(cfg)) {}

  std::string complete(const std::string& prompt) const {
    httplib::Client cli(cfg_.base_url);
    cli.set_connection_timeout(cfg_.timeout_seconds);
    cli.set_read_timeout(cfg_.timeout_seconds);
    httplib::Headers headers;
    if (const char* tok = std::getenv(kRemoteTokenEnv))
      headers.emplace("Authorization", std::string("Bearer ") + tok);

    const nlohmann::ordered_json body{
        {"model", cfg_.model},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
        {"temperature", 0}};
    const auto res = cli.Post(cfg_.path, headers, body.dump(), "application/json");
    if (!res)
      fail(Errc::extractor_unreachable,
           cfg_.base_url + cfg_.path + ": " + httplib::to_string(res.error()));
    if (res->status != 200)
      fail(Errc::extractor_unreachable,
           cfg_.base_url + cfg_.path + ": HTTP " + std::to_string(res->status));
    try {
      const auto j = nlohmann::json::parse(res->body);
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const std::exception& ex) {
      std::string raw = res->body.substr(0, 500);
      fail(Errc::malformed_extractor_reply,
           std::string(ex.what()) + "; raw payload: " + raw);
    }
  }

  const RemoteConfig& config() const { return cfg_; }

 private:
  RemoteConfig cfg_;
};

namespace detail {

inline std::string render_prompt(const std::string& tmpl, const std::string& report_text) {
  const std::string ph = "{report}";
  const std::size_t pos = tmpl.find(ph);
  require(pos != std::string::npos, Errc::bad_prompt_template,
          "prompt template lacks {report}");
  std::string out = tmpl;
  out.replace(pos, ph.size(), report_text);
  return out;
}

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

} // namespace detail

class RemoteExtractor final : public Extractor {
 public:
  explicit RemoteExtractor(RemoteConfig cfg) : client_(std::move(cfg)) {}

  std::string name() const override { return "remote:" + client_.config().model; }

  ElementExtraction extract_element(const PathologyReport& report,
                                    const TemplateElement& element) override {
    const std::string prompt = detail::render_prompt(element.prompt_template, report.text);
    const std::string reply = detail::trim(client_.complete(prompt));
    ElementExtraction out;
    if (reply.empty()) return out;
    const std::string c = text::canonical(reply);
    if (c.empty() || c == "absent" || c == "unknown" || c == "not reported" ||
        c == "not stated")
      return out;
    out.value = reply; // closed replies are canonicalized onto options upstream
    return out;
  }

  Verdict verify_element(const PathologyReport& report, const TemplateElement& element,
                         const std::string& value) override {
    std::string prompt = "Pathology report:\n" + report.text + "\n\nStatement: the " +
                         element.phrase + " is \"" + value +
                         "\".\nDoes the report support this statement? Reply with exactly one "
                         "word: correct, incorrect, or unknown.";
    const std::string reply = text::canonical(client_.complete(prompt));
    if (reply == "correct" || reply == "yes") return Verdict::confirmed;
    if (reply == "incorrect" || reply == "no") return Verdict::contradicted;
    return Verdict::unknown;
  }

 private:
  RemoteClient client_;
};

// Remote prose realizer for description samples; the builder still validates
// that every selected value is mentioned.
class RemoteRealizer final : public Realizer {
 public:
  explicit RemoteRealizer(RemoteConfig cfg) : client_(std::move(cfg)) {}

  std::string name() const override { return "remote:" + client_.config().model; }

  std::string realize(const std::string&,
                      const std::vector<std::pair<std::string, std::string>>& pv) override {
    std::string prompt =
        "Write one or two fluent sentences describing a breast tumor specimen with these "
        "findings, mentioning every value verbatim:\n";
    for (const auto& [phrase, value] : pv)
      prompt += "- " + phrase + ": " + value + "\n";
    return detail::trim(client_.complete(prompt));
  }

 private:
  RemoteClient client_;
};

} // namespace ctis
