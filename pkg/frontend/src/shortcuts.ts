// Keyboard layer: digits label the active card, arrows move between
// cards, "s" skips when the session allows it. Throughput is the point,
// so every choice is reachable without the mouse.

const IGNORED_TAGS = new Set(["INPUT", "TEXTAREA", "SELECT"]);

export interface ShortcutHandler {
  chooseClass(classId: number): void;
  chooseSkip(): void;
  moveActive(delta: number): void;
  submit(): void;
}

export function attachShortcuts(
  target: Pick<Document, "addEventListener" | "removeEventListener">,
  handler: ShortcutHandler,
): () => void {
  const onKeyDown = (event: Event) => {
    const key = (event as KeyboardEvent).key;
    const element = event.target as HTMLElement | null;
    if (element && (IGNORED_TAGS.has(element.tagName) || element.isContentEditable)) {
      return;
    }
    if (key >= "1" && key <= "9") {
      event.preventDefault();
      handler.chooseClass(Number(key) - 1);
    } else if (key === "s") {
      event.preventDefault();
      handler.chooseSkip();
    } else if (key === "ArrowDown" || key === "j") {
      event.preventDefault();
      handler.moveActive(1);
    } else if (key === "ArrowUp" || key === "k") {
      event.preventDefault();
      handler.moveActive(-1);
    } else if (key === "Enter") {
      event.preventDefault();
      handler.submit();
    }
  };
  target.addEventListener("keydown", onKeyDown);
  return () => target.removeEventListener("keydown", onKeyDown);
}
