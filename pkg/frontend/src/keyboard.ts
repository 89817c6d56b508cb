/** Single-key bindings for bulk review. */

import type { ReviewAction } from "./reviewLoop.js";

export function actionForKey(key: string): ReviewAction | null {
  switch (key) {
    case "a":
    case "A":
    case "1":
      return "accept";
    case "x":
    case "X":
    case "2":
      return "reject";
    case "s":
    case "S":
    case "3":
      return "skip";
    default:
      return null;
  }
}
