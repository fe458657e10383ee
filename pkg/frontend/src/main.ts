import { AnnotatorApp } from "./app.js";

// Entry point for the static page. The service address and session id
// arrive as query parameters so the page itself stays host-agnostic:
//   annotator.html?base=http://localhost:8000&session=abc123&classes=spam,ham

function boot(): void {
  const root = document.getElementById("root");
  if (!root) return;
  const params = new URLSearchParams(window.location.search);
  const sessionId = params.get("session");
  if (!sessionId) {
    root.textContent =
      "missing ?session=<id> (and optionally ?base=<service url>, ?classes=a,b,c)";
    return;
  }
  const base = params.get("base") ?? window.location.origin;
  const classNames = params.get("classes")?.split(",");
  const app = new AnnotatorApp({ base, sessionId, root, classNames });
  void app.start();
}

boot();
