export { registerSut, RegistrationError, SutHandle } from "./sut.js";
export { run, plan, HarnessError, type RunOptions } from "./runner.js";
export {
  toConfigObject,
  type ClockKind,
  type CompletionContext,
  type IssuedQuery,
  type Mode,
  type RunOutput,
  type RunSummary,
  type Scenario,
  type Settings,
  type SutCallbacks,
} from "./types.js";
