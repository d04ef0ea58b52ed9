#pragma once

#include <compare>
#include <string>
#include <string_view>

namespace memeforge {

/// Either a concrete template id or the Templateless sentinel. Templateless
/// orders after every concrete template.
class TemplateLabel {
 public:
  /// Wire spelling of the sentinel in predictions and clustering files.
  static constexpr std::string_view kTemplatelessToken = "__templateless__";

  static TemplateLabel templateless() { return TemplateLabel(); }
  static TemplateLabel of(std::string template_id);
  /// Inverse of to_string().
  static TemplateLabel parse(std::string_view token);

  bool is_templateless() const noexcept { return templateless_; }
  bool is_template() const noexcept { return !templateless_; }
  /// Empty for the sentinel.
  const std::string& template_id() const noexcept { return id_; }
  std::string to_string() const {
    return templateless_ ? std::string(kTemplatelessToken) : id_;
  }

  friend bool operator==(const TemplateLabel&, const TemplateLabel&) = default;
  friend std::strong_ordering operator<=>(const TemplateLabel& a, const TemplateLabel& b) {
    if (a.templateless_ != b.templateless_) {
      return a.templateless_ ? std::strong_ordering::greater : std::strong_ordering::less;
    }
    return a.id_ <=> b.id_;
  }

 private:
  TemplateLabel() = default;
  explicit TemplateLabel(std::string id) : id_(std::move(id)), templateless_(false) {}

  std::string id_;
  bool templateless_ = true;
};

/// One method output for one image. Templateless predictions carry score 0.
struct Prediction {
  std::string image_id;
  TemplateLabel label = TemplateLabel::templateless();
  double score = 0.0;
  std::string method;

  static Prediction rejected(std::string image_id, std::string method) {
    return Prediction{std::move(image_id), TemplateLabel::templateless(), 0.0, std::move(method)};
  }
};

}  // namespace memeforge
