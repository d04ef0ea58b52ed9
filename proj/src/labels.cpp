#include "memeforge/labels.hpp"

#include "memeforge/error.hpp"

namespace memeforge {

TemplateLabel TemplateLabel::of(std::string template_id) {
  if (template_id.empty()) {
    throw Error(ErrorCode::InvalidArgument, "template id must be non-empty");
  }
  if (template_id == kTemplatelessToken) {
    throw Error(ErrorCode::InvalidArgument, "template id collides with the templateless token");
  }
  return TemplateLabel(std::move(template_id));
}

TemplateLabel TemplateLabel::parse(std::string_view token) {
  if (token == kTemplatelessToken) return templateless();
  return of(std::string(token));
}

}  // namespace memeforge
