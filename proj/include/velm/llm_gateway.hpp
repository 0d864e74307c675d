#pragma once

#include <httplib.h>

#include <atomic>
#include <cctype>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "velm/digest.hpp"
#include "velm/error.hpp"
#include "velm/image.hpp"
#include "velm/json.hpp"
#include "velm/metrics.hpp"
#include "velm/prompting.hpp"

namespace velm {

inline constexpr int kAttachmentSide = 448;

struct BackendConfig {
    std::string kind = "openai";  // openai | replay | mock_echo | mock_noisy | mock_constant | mock_length
    std::string endpoint = "https://api.openai.com/v1";
    std::string model = "gpt-4o";
    double temperature = 0.0;
    int max_tokens = 64;
    std::string api_key_env = "OPENAI_API_KEY";
    int timeout_s = 60;
    int max_retries = 3;
    std::vector<double> backoff_s{1.0, 4.0, 16.0};
    int parallelism = 1;
    // mock parameters
    std::string answer;          // mock_constant
    double error_rate = 0.0;     // mock_noisy
    std::uint64_t mock_seed = 0;  // mock_noisy
    std::size_t min_chars = 0;   // mock_length
};

inline BackendConfig backend_config_from_json(const Json& j) {
    BackendConfig c;
    try {
        c.kind = j.value("kind", c.kind);
        c.endpoint = j.value("endpoint", c.endpoint);
        c.model = j.value("model", c.model);
        c.temperature = j.value("temperature", c.temperature);
        c.max_tokens = j.value("max_tokens", c.max_tokens);
        c.api_key_env = j.value("api_key_env", c.api_key_env);
        c.timeout_s = j.value("timeout_s", c.timeout_s);
        c.max_retries = j.value("max_retries", c.max_retries);
        c.backoff_s = j.value("backoff_s", c.backoff_s);
        c.parallelism = j.value("parallelism", c.parallelism);
        c.answer = j.value("answer", c.answer);
        c.error_rate = j.value("error_rate", c.error_rate);
        c.mock_seed = j.value("seed", c.mock_seed);
        c.min_chars = j.value("min_chars", c.min_chars);
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("malformed backend config: ") + e.what());
    }
    static const std::set<std::string> kinds{"openai", "replay", "mock_echo", "mock_noisy", "mock_constant", "mock_length"};
    if (!kinds.count(c.kind)) throw ValidationError("unknown backend kind '" + c.kind + "'");
    if (c.parallelism < 1) throw ValidationError("backend parallelism must be >= 1");
    if (c.max_retries < 0) throw ValidationError("max_retries must be >= 0");
    if (c.max_tokens < 1) throw ValidationError("max_tokens must be >= 1");
    if (c.error_rate < 0.0 || c.error_rate > 1.0) throw ValidationError("error_rate must be in [0, 1]");
    for (double b : c.backoff_s)
        if (b < 0.0) throw ValidationError("backoff_s entries must be >= 0");
    return c;
}

// ---------------------------------------------------------------------------
// Attachments

/// PNG bytes are produced on demand: only the wire path needs them, cache keys hash pixels.
struct Attachment {
    ImageRole role = ImageRole::query;
    RgbImage image;  // 448 x 448

    std::vector<std::uint8_t> png() const { return encode_png(image); }
    std::string data_uri() const { return "data:image/png;base64," + base64_encode(png()); }
};

inline Attachment resize_and_encode(const RgbImage& image, ImageRole role = ImageRole::query) {
    if (image.empty()) throw ValidationError("resize_and_encode: zero-dimension image");
    Attachment a;
    a.role = role;
    a.image = resize_bilinear(image, kAttachmentSide, kAttachmentSide);
    return a;
}

/// Digest of decoded attachment pixels; mocks use it to recognize query images.
inline std::string pixel_digest(const RgbImage& img) {
    Sha256 h;
    h.u64(static_cast<std::uint64_t>(img.width())).u64(static_cast<std::uint64_t>(img.height())).bytes(img.bytes());
    return h.hex();
}

/// Backend-ready request: the text plus resized attachments in request order.
struct PreparedRequest {
    std::string category;
    std::vector<std::string> class_names;
    std::string text_prompt;
    std::vector<Attachment> attachments;
    std::string model;
    double temperature = 0.0;
    int max_tokens = 64;

    const Attachment& attachment(ImageRole role) const {
        for (const auto& a : attachments)
            if (a.role == role) return a;
        throw ValidationError(std::string("request has no ") + to_string(role) + " attachment");
    }
};

/// Hash of model, temperature, prompt text and the ordered post-resize pixels.
inline std::string cache_key(const PreparedRequest& r) {
    Sha256 h;
    h.text("velm-request-v1").text(r.model);
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(r.temperature));
    std::memcpy(&bits, &r.temperature, sizeof bits);
    h.u64(bits).text(r.text_prompt).u64(r.attachments.size());
    for (const auto& a : r.attachments) {
        h.u64(static_cast<std::uint64_t>(a.image.width())).u64(static_cast<std::uint64_t>(a.image.height())).bytes(a.image.bytes());
    }
    return h.hex();
}

inline PreparedRequest prepare(const ClassificationRequest& req, const BackendConfig& cfg) {
    PreparedRequest p;
    p.category = req.category;
    p.class_names = req.class_names;
    p.text_prompt = req.text_prompt;
    p.model = cfg.model;
    p.temperature = cfg.temperature;
    p.max_tokens = cfg.max_tokens;
    for (const auto& img : req.images) p.attachments.push_back(resize_and_encode(img.image, img.role));
    return p;
}

/// OpenAI-compatible chat-completions body: one user message, text part then image parts.
inline Json chat_completions_body(const PreparedRequest& r) {
    Json content = Json::array();
    content.push_back({{"type", "text"}, {"text", r.text_prompt}});
    for (const auto& a : r.attachments) content.push_back({{"type", "image_url"}, {"image_url", {{"url", a.data_uri()}}}});
    return {{"model", r.model},
            {"temperature", r.temperature},
            {"max_tokens", r.max_tokens},
            {"messages", Json::array({{{"role", "user"}, {"content", content}}})}};
}

inline std::string response_text(const Json& body) {
    try {
        const auto& content = body.at("choices").at(0).at("message").at("content");
        if (content.is_string()) return content.get<std::string>();
        std::string out;
        for (const auto& part : content)
            if (part.value("type", "") == "text") out += part.value("text", "");
        return out;
    } catch (const Json::exception& e) {
        throw BackendError(std::string("unexpected response shape: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Label parsing

/// Lowercase; every run of non-alphanumerics becomes one underscore; no leading/trailing underscore.
inline std::string normalize_label(std::string_view s) {
    std::string out;
    bool pending = false;
    for (unsigned char c : s) {
        if (std::isalnum(c)) {
            if (pending && !out.empty()) out.push_back('_');
            pending = false;
            out.push_back(static_cast<char>(std::tolower(c)));
        } else {
            pending = true;
        }
    }
    return out;
}

/// Exact normalized match, else the longest class name contained in the text (ties to list order), else Unparsed.
inline std::string parse_class_label(std::string_view raw_text, const std::vector<std::string>& class_names) {
    if (class_names.empty()) throw ValidationError("parse_class_label: empty class list");
    const std::string text = normalize_label(raw_text);
    for (const auto& c : class_names)
        if (normalize_label(c) == text) return c;
    const std::string* best = nullptr;
    std::size_t best_len = 0;
    for (const auto& c : class_names) {
        const auto n = normalize_label(c);
        if (n.empty() || text.find(n) == std::string::npos) continue;
        if (n.size() > best_len) {
            best = &c;
            best_len = n.size();
        }
    }
    return best ? *best : std::string(kUnparsed);
}

// ---------------------------------------------------------------------------
// Backends

class Backend {
public:
    virtual ~Backend() = default;
    /// Raw completion text. Throws BackendError on failure.
    virtual std::string complete(const PreparedRequest& request) = 0;
    std::size_t calls() const { return calls_.load(); }

protected:
    void count() { calls_.fetch_add(1); }

private:
    std::atomic<std::size_t> calls_{0};
};

class OpenAiBackend final : public Backend {
public:
    explicit OpenAiBackend(BackendConfig cfg) : cfg_(std::move(cfg)) {
        const auto scheme_end = cfg_.endpoint.find("://");
        if (scheme_end == std::string::npos) throw ValidationError("endpoint must include a scheme: " + cfg_.endpoint);
        const auto path_start = cfg_.endpoint.find('/', scheme_end + 3);
        host_ = cfg_.endpoint.substr(0, path_start);
        path_ = path_start == std::string::npos ? "" : cfg_.endpoint.substr(path_start);
        while (!path_.empty() && path_.back() == '/') path_.pop_back();
        path_ += "/chat/completions";
    }

    std::string complete(const PreparedRequest& request) override {
        count();
        httplib::Client client(host_);
        client.set_connection_timeout(cfg_.timeout_s);
        client.set_read_timeout(cfg_.timeout_s);
        client.set_write_timeout(cfg_.timeout_s);
        httplib::Headers headers;
        if (!cfg_.api_key_env.empty()) {
            if (const char* key = std::getenv(cfg_.api_key_env.c_str())) {
                headers.emplace("Authorization", std::string("Bearer ") + key);
            }
        }
        const auto res = client.Post(path_, headers, chat_completions_body(request).dump(), "application/json");
        if (!res) throw BackendError("request to " + host_ + path_ + " failed: " + httplib::to_string(res.error()));
        if (res->status != 200) {
            const bool transient = res->status == 408 || res->status == 429 || res->status >= 500;
            throw BackendError("backend returned HTTP " + std::to_string(res->status), {}, transient);
        }
        Json body;
        try {
            body = Json::parse(res->body);
        } catch (const Json::exception& e) {
            throw BackendError(std::string("backend returned invalid JSON: ") + e.what());
        }
        return response_text(body);
    }

private:
    BackendConfig cfg_;
    std::string host_;
    std::string path_;
};

/// Answers only from the cache; any call is a miss.
class ReplayBackend final : public Backend {
public:
    std::string complete(const PreparedRequest&) override {
        count();
        throw BackendError("replay mode: response not in cache", {}, false);
    }
};

class ConstantBackend final : public Backend {
public:
    explicit ConstantBackend(std::string answer) : answer_(std::move(answer)) {}
    std::string complete(const PreparedRequest&) override {
        count();
        return answer_;
    }

private:
    std::string answer_;
};

/// Query-image digest -> ground-truth class. Built by the caller, never sent in requests.
using TruthTable = std::map<std::string, std::string>;

namespace gateway_detail {

/// Which listed class a fine-grained truth corresponds to: the class itself, or the listed class whose
/// prompt line names it among "one of: a (..); b (..)" members.
inline std::optional<std::string> resolve_truth(const std::string& truth, const PreparedRequest& r) {
    for (const auto& c : r.class_names)
        if (c == truth) return c;
    std::size_t pos = 0;
    const std::string& p = r.text_prompt;
    while (pos < p.size()) {
        const auto eol = std::min(p.find('\n', pos), p.size());
        const std::string line = p.substr(pos, eol - pos);
        pos = eol + 1;
        if (!line.starts_with("- ")) continue;
        const auto colon = line.find(": ");
        const auto members = line.find("one of: ");
        if (colon == std::string::npos || members == std::string::npos) continue;
        const std::string name = line.substr(2, colon - 2);
        std::size_t m = members + 8;
        while (m < line.size()) {
            auto end = line.find("; ", m);
            if (end == std::string::npos) end = line.size();
            std::string item = line.substr(m, end - m);
            if (auto paren = item.find(" ("); paren != std::string::npos) item.resize(paren);
            while (!item.empty() && item.back() == '.') item.pop_back();
            if (item == truth) return name;
            m = end + 2;
        }
    }
    return std::nullopt;
}

inline const std::string& lookup(const TruthTable& table, const PreparedRequest& r) {
    const auto digest = pixel_digest(r.attachment(ImageRole::query).image);
    auto it = table.find(digest);
    if (it == table.end()) throw BackendError("mock: query image not in truth table", {}, false);
    return it->second;
}

}  // namespace gateway_detail

/// Replies with the true class of the query image.
class EchoBackend final : public Backend {
public:
    explicit EchoBackend(TruthTable table) : table_(std::move(table)) {}
    std::string complete(const PreparedRequest& r) override {
        count();
        const auto& truth = gateway_detail::lookup(table_, r);
        auto answer = gateway_detail::resolve_truth(truth, r);
        return answer ? *answer : "I cannot determine the anomaly class.";
    }

private:
    TruthTable table_;
};

/// Echo with free-text phrasing and a seeded error rate; the choice depends only on the request.
class NoisyEchoBackend final : public Backend {
public:
    NoisyEchoBackend(TruthTable table, double error_rate, std::uint64_t seed)
        : table_(std::move(table)), error_rate_(error_rate), seed_(seed) {}

    std::string complete(const PreparedRequest& r) override {
        count();
        const auto& truth = gateway_detail::lookup(table_, r);
        SeededRng rng(mix_seed(seed_, cache_key(r)));
        std::string answer = gateway_detail::resolve_truth(truth, r).value_or(r.class_names.front());
        if (rng.uniform() < error_rate_) {
            if (rng.below(4) == 0) return "I am not sure what kind of defect this is.";
            answer = r.class_names[static_cast<std::size_t>(rng.below(r.class_names.size()))];
        }
        std::string spaced = answer;
        for (auto& ch : spaced)
            if (ch == '_') ch = ' ';
        switch (rng.below(4)) {
            case 0: return answer;
            case 1: return "The anomaly is " + spaced + ".";
            case 2: return "Answer: " + answer;
            default: return "This looks like " + spaced + " on the " + display_name(r.category) + ".";
        }
    }

private:
    TruthTable table_;
    double error_rate_;
    std::uint64_t seed_;
};

/// Correct when the prompt has at least `min_chars` characters, otherwise a wrong class.
class LengthSensitiveBackend final : public Backend {
public:
    LengthSensitiveBackend(TruthTable table, std::size_t min_chars) : table_(std::move(table)), min_chars_(min_chars) {}
    std::string complete(const PreparedRequest& r) override {
        count();
        const auto& truth = gateway_detail::lookup(table_, r);
        const auto answer = gateway_detail::resolve_truth(truth, r).value_or(r.class_names.front());
        if (r.text_prompt.size() >= min_chars_) return answer;
        const auto it = std::find(r.class_names.begin(), r.class_names.end(), answer);
        const auto i = static_cast<std::size_t>(it - r.class_names.begin());
        return r.class_names[(i + 1) % r.class_names.size()];
    }

private:
    TruthTable table_;
    std::size_t min_chars_;
};

/// mock_* kinds need the truth table; the others ignore it.
inline std::shared_ptr<Backend> make_backend(const BackendConfig& cfg, const TruthTable& truth = {}) {
    if (cfg.kind == "openai") return std::make_shared<OpenAiBackend>(cfg);
    if (cfg.kind == "replay") return std::make_shared<ReplayBackend>();
    if (cfg.kind == "mock_constant") return std::make_shared<ConstantBackend>(cfg.answer);
    if (cfg.kind == "mock_echo") return std::make_shared<EchoBackend>(truth);
    if (cfg.kind == "mock_noisy") return std::make_shared<NoisyEchoBackend>(truth, cfg.error_rate, cfg.mock_seed);
    if (cfg.kind == "mock_length") return std::make_shared<LengthSensitiveBackend>(truth, cfg.min_chars);
    throw ValidationError("unknown backend kind '" + cfg.kind + "'");
}

inline bool backend_needs_truth(const BackendConfig& cfg) { return cfg.kind.starts_with("mock_") && cfg.kind != "mock_constant"; }

// ---------------------------------------------------------------------------
// Cache

struct CacheEntry {
    std::string request_digest;
    std::string raw_text;
    std::string model;
    std::string timestamp;
};

class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

    const std::filesystem::path& dir() const { return dir_; }
    std::filesystem::path path_for(const std::string& key) const { return dir_ / (key + ".json"); }

    std::optional<CacheEntry> load(const std::string& key) const {
        const auto p = path_for(key);
        if (!std::filesystem::is_regular_file(p)) return std::nullopt;
        const Json j = read_json_file(p);
        try {
            CacheEntry e{j.at("request_digest").get<std::string>(), j.at("raw_text").get<std::string>(),
                         j.value("model", std::string{}), j.value("timestamp", std::string{})};
            if (e.request_digest != key) throw IoError("cache entry digest does not match its file name", p);
            return e;
        } catch (const Json::exception& e) {
            throw IoError(std::string("malformed cache entry (") + e.what() + ")", p);
        }
    }

    void store(const CacheEntry& e) const {
        OrderedJson j;
        j["request_digest"] = e.request_digest;
        j["raw_text"] = e.raw_text;
        j["model"] = e.model;
        j["timestamp"] = e.timestamp;
        write_json_file(path_for(e.request_digest), j);
    }

private:
    std::filesystem::path dir_;
};

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// ---------------------------------------------------------------------------
// Gateway

struct Prediction {
    std::string sample_id;
    std::string predicted_class;
    std::string raw_text;
    std::string cache_key;
    bool cached = false;
    double latency_ms = 0.0;
};

/// Shareable across workers. Identical in-flight requests are sent once.
class Gateway {
public:
    Gateway(BackendConfig cfg, std::shared_ptr<Backend> backend, std::optional<std::filesystem::path> cache_dir = std::nullopt)
        : cfg_(std::move(cfg)), backend_(std::move(backend)) {
        if (cache_dir) cache_.emplace(*cache_dir);
    }

    const BackendConfig& config() const { return cfg_; }
    Backend& backend() const { return *backend_; }

    Prediction classify(const ClassificationRequest& request, const std::string& sample_id) {
        const auto start = std::chrono::steady_clock::now();
        const PreparedRequest prepared = prepare(request, cfg_);
        Prediction p;
        p.sample_id = sample_id;
        p.cache_key = cache_key(prepared);
        try {
            auto [text, cached] = fetch(prepared, p.cache_key);
            p.raw_text = std::move(text);
            p.cached = cached;
        } catch (const BackendError& e) {
            throw BackendError(e.what(), sample_id, e.transient());
        }
        p.predicted_class = parse_class_label(p.raw_text, request.class_names);
        p.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        return p;
    }

private:
    struct Flight {
        bool done = false;
        std::string text;
        std::exception_ptr error;
    };

    std::pair<std::string, bool> fetch(const PreparedRequest& r, const std::string& key) {
        std::shared_ptr<Flight> flight;
        bool leader = false;
        {
            std::unique_lock lock(mu_);
            if (cache_) {
                if (auto hit = cache_->load(key)) return {hit->raw_text, true};
            }
            auto it = inflight_.find(key);
            if (it == inflight_.end()) {
                flight = std::make_shared<Flight>();
                inflight_[key] = flight;
                leader = true;
            } else {
                flight = it->second;
            }
        }
        if (!leader) {
            std::unique_lock lock(mu_);
            cv_.wait(lock, [&] { return flight->done; });
            if (flight->error) std::rethrow_exception(flight->error);
            return {flight->text, cache_.has_value()};
        }
        std::string text;
        std::exception_ptr error;
        try {
            text = send_with_retries(r);
            if (cache_) cache_->store({key, text, r.model, utc_timestamp()});
        } catch (...) {
            error = std::current_exception();
        }
        {
            std::lock_guard lock(mu_);
            flight->done = true;
            flight->text = text;
            flight->error = error;
            inflight_.erase(key);
        }
        cv_.notify_all();
        if (error) std::rethrow_exception(error);
        return {text, false};
    }

    std::string send_with_retries(const PreparedRequest& r) {
        for (int attempt = 0;; ++attempt) {
            try {
                return backend_->complete(r);
            } catch (const BackendError& e) {
                if (!e.transient() || attempt >= cfg_.max_retries) {
                    throw BackendError(std::string(e.what()) + " after " + std::to_string(attempt + 1) + " attempt(s)", {},
                                       e.transient());
                }
                const auto& b = cfg_.backoff_s;
                const double wait = b.empty() ? 0.0 : b[std::min(static_cast<std::size_t>(attempt), b.size() - 1)];
                if (wait > 0) std::this_thread::sleep_for(std::chrono::duration<double>(wait));
            }
        }
    }

    BackendConfig cfg_;
    std::shared_ptr<Backend> backend_;
    std::optional<ResponseCache> cache_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::map<std::string, std::shared_ptr<Flight>> inflight_;
};

}  // namespace velm
