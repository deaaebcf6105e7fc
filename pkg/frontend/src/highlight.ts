// Map a recommended span to a character range of the paragraph text using
// only the two strings the service returned (no client-side tokenizer).

export interface CharRange {
  start: number;
  end: number; // exclusive
}

export interface TextSegment {
  text: string;
  highlighted: boolean;
}

/**
 * Locate the span text inside the paragraph text. When the span occurs more
 * than once, token_start disambiguates: the service joins tokens with single
 * spaces, so the number of space-separated chunks preceding the true
 * occurrence equals the span's starting token offset.
 */
export function spanCharRange(
  paragraphText: string,
  spanText: string,
  tokenStart: number,
): CharRange | null {
  if (!spanText) return null;
  const occurrences: number[] = [];
  let at = paragraphText.indexOf(spanText);
  while (at !== -1) {
    occurrences.push(at);
    at = paragraphText.indexOf(spanText, at + 1);
  }
  if (occurrences.length === 0) return null;
  let best = occurrences[0];
  for (const offset of occurrences) {
    const before = paragraphText.slice(0, offset);
    const chunks = before === "" ? 0 : before.trimEnd().split(" ").length;
    if (chunks === tokenStart) {
      best = offset;
      break;
    }
  }
  return { start: best, end: best + spanText.length };
}

/** Split paragraph text into plain/highlighted segments for rendering. */
export function highlightSegments(
  paragraphText: string,
  range: CharRange | null,
): TextSegment[] {
  if (!range || range.start < 0 || range.end > paragraphText.length) {
    return [{ text: paragraphText, highlighted: false }];
  }
  const segments: TextSegment[] = [];
  if (range.start > 0) {
    segments.push({ text: paragraphText.slice(0, range.start), highlighted: false });
  }
  segments.push({ text: paragraphText.slice(range.start, range.end), highlighted: true });
  if (range.end < paragraphText.length) {
    segments.push({ text: paragraphText.slice(range.end), highlighted: false });
  }
  return segments;
}
